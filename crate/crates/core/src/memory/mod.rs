//! Long-term memory: documents decomposed into propositions and
//! concept/perspective pairs, embedded at each granularity, and retrieved
//! by four matchers merged on maximum similarity.

mod embed;
mod extract;
mod merge;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{
    bucket, cosine, embed_reference, fnv1a64, reference_tokens, Embedder, EmbedderFailure,
    ReferenceEmbedder, ReferenceEmbedding, REFERENCE_DIM,
};
pub use extract::{
    capitalized_phrases, normalize_concept, split_sentences, Extractor, ExtractorFailure,
    LlmExtractor, PropositionDraft, RuleExtractor, EXTRACTION_PROMPT,
};
pub use merge::{merge_rankings, Matcher, RankedEntry, RankedResult, ScoredList};

pub const RECORD_SCHEMA: &str = "mem/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("cannot ingest empty text")]
    EmptyText,
    #[error(transparent)]
    Embedder(#[from] EmbedderFailure),
    #[error("record schema {0} is not supported")]
    Schema(String),
    #[error("persisting record failed: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    Dialogue,
    File,
    Note,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub timestamp: String,
    pub source: MemorySource,
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition {
    pub prop_id: String,
    pub text: String,
    pub prop_emb: Vec<f64>,
    pub concept: String,
    pub perspective: String,
    pub cp_emb: Vec<f64>,
    pub mentioned_concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub schema: String,
    pub doc_id: String,
    pub text: String,
    pub doc_emb: Vec<f64>,
    pub propositions: Vec<Proposition>,
    pub meta: RecordMeta,
    /// Set when extraction failed and only the document granularity exists.
    #[serde(default)]
    pub degraded: bool,
}

impl MemoryRecord {
    /// Union of normalized mentioned concepts over all propositions.
    pub fn concepts(&self) -> BTreeSet<String> {
        self.propositions.iter().flat_map(|p| p.mentioned_concepts.iter().cloned()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, MemoryError> {
        let r: Self = serde_json::from_str(json).map_err(|e| MemoryError::Schema(e.to_string()))?;
        if r.schema != RECORD_SCHEMA {
            return Err(MemoryError::Schema(r.schema));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub text: String,
    pub query_emb: Vec<f64>,
    pub concepts: Vec<String>,
    pub perspective: Option<String>,
    pub k: usize,
}

impl RetrievalQuery {
    /// Embeds `text` and takes its capitalized phrases as query concepts.
    pub fn from_text(text: &str, k: usize, embedder: &dyn Embedder) -> Self {
        let query_emb = embedder.embed(text).unwrap_or_else(|_| vec![0.0; REFERENCE_DIM]);
        let mut concepts: Vec<String> = Vec::new();
        for c in capitalized_phrases(text) {
            let n = normalize_concept(&c);
            if !concepts.contains(&n) {
                concepts.push(n);
            }
        }
        Self { text: text.to_string(), query_emb, concepts, perspective: None, k }
    }

    pub fn with_concepts<S: AsRef<str>>(mut self, concepts: impl IntoIterator<Item = S>) -> Self {
        self.concepts = concepts.into_iter().map(|c| normalize_concept(c.as_ref())).collect();
        self.concepts.dedup();
        self
    }
}

/// The four candidate lists computed for one query, before merging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatcherLists {
    pub doc_soft: ScoredList,
    pub prop_soft: ScoredList,
    pub concept_soft: ScoredList,
    pub concept_hard: ScoredList,
}

impl MatcherLists {
    pub fn merge(&self, k: Option<usize>) -> RankedResult {
        merge_rankings([&self.doc_soft, &self.prop_soft, &self.concept_soft, &self.concept_hard], k)
    }

    pub fn get(&self, m: Matcher) -> &ScoredList {
        match m {
            Matcher::DocSoft => &self.doc_soft,
            Matcher::PropSoft => &self.prop_soft,
            Matcher::ConceptSoft => &self.concept_soft,
            Matcher::ConceptHard => &self.concept_hard,
        }
    }
}

/// Receives every record after ingest, e.g. to write it to durable storage.
pub trait RecordSink: Send + Sync {
    fn save(&self, record: &MemoryRecord) -> Result<(), String>;
}

/// Brute-force multi-granularity store. Records are partitioned by user;
/// nothing crosses partitions.
pub struct MemoryStore {
    embedder: Arc<dyn Embedder>,
    extractor: Arc<dyn Extractor>,
    records: RwLock<HashMap<String, Arc<Vec<Arc<MemoryRecord>>>>>,
    ingest_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    next_id: AtomicU64,
    id_prefix: String,
    sink: RwLock<Option<Arc<dyn RecordSink>>>,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new(Arc::new(ReferenceEmbedder), Arc::new(RuleExtractor))
    }
}

impl MemoryStore {
    pub fn new(embedder: Arc<dyn Embedder>, extractor: Arc<dyn Extractor>) -> Self {
        Self {
            embedder,
            extractor,
            records: RwLock::new(HashMap::new()),
            ingest_locks: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            id_prefix: "doc".into(),
            sink: RwLock::new(None),
        }
    }

    /// Same engine, but doc ids use `prefix` (e.g. per-file scratch stores).
    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.id_prefix = prefix.into();
        self
    }

    pub fn set_sink(&self, sink: Arc<dyn RecordSink>) {
        *self.sink.write() = Some(sink);
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    fn user_lock(&self, user: &str) -> Arc<Mutex<()>> {
        self.ingest_locks.lock().entry(user.to_string()).or_default().clone()
    }

    /// Ingests `text`, running extraction on `extract_from` (usually the same
    /// text). Extraction failures degrade the record to document level.
    pub fn ingest_with(&self, text: &str, extract_from: &str, meta: RecordMeta) -> Result<String, MemoryError> {
        if text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let doc_emb = self.embedder.embed(text)?;
        let (drafts, degraded) = match self.extractor.extract(extract_from) {
            Ok(d) => (d, false),
            Err(e) => {
                tracing::warn!(error = %e, "extraction failed; storing document only");
                (Vec::new(), true)
            }
        };
        let lock = self.user_lock(&meta.user_id);
        let _guard = lock.lock();
        let doc_id = format!("{}-{:06}", self.id_prefix, self.next_id.fetch_add(1, Ordering::SeqCst));
        let mut propositions = Vec::with_capacity(drafts.len());
        for (i, d) in drafts.into_iter().enumerate() {
            let prop_emb = self.embedder.embed(&d.text)?;
            let cp_emb = self.embedder.embed(&format!("{} {}", d.concept, d.perspective))?;
            let mentioned = d.mentioned_concepts.iter().map(|c| normalize_concept(c)).collect();
            propositions.push(Proposition {
                prop_id: format!("{doc_id}/p{}", i + 1),
                text: d.text,
                prop_emb,
                concept: d.concept,
                perspective: d.perspective,
                cp_emb,
                mentioned_concepts: mentioned,
            });
        }
        let record = MemoryRecord {
            schema: RECORD_SCHEMA.into(),
            doc_id: doc_id.clone(),
            text: text.to_string(),
            doc_emb,
            propositions,
            meta,
            degraded,
        };
        if let Some(sink) = self.sink.read().clone() {
            sink.save(&record).map_err(MemoryError::Storage)?;
        }
        self.insert(record);
        Ok(doc_id)
    }

    pub fn ingest(&self, text: &str, meta: RecordMeta) -> Result<String, MemoryError> {
        self.ingest_with(text, text, meta)
    }

    /// Stores a dialogue turn as `content@@timestamp`.
    pub fn store_dialogue(&self, content: &str, timestamp: &str, user_id: &str) -> Result<String, MemoryError> {
        if content.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let meta = RecordMeta { timestamp: timestamp.into(), source: MemorySource::Dialogue, user_id: user_id.into() };
        self.ingest_with(&format!("{content}@@{timestamp}"), content, meta)
    }

    /// Adds an already-built record (e.g. loaded from durable storage).
    pub fn insert(&self, record: MemoryRecord) {
        if let Some(n) = record
            .doc_id
            .strip_prefix(&format!("{}-", self.id_prefix))
            .and_then(|n| n.parse::<u64>().ok())
        {
            self.next_id.fetch_max(n + 1, Ordering::SeqCst);
        }
        let mut all = self.records.write();
        let part = all.entry(record.meta.user_id.clone()).or_default();
        Arc::make_mut(part).push(Arc::new(record));
    }

    pub fn get(&self, user_id: &str, doc_id: &str) -> Option<Arc<MemoryRecord>> {
        self.snapshot(user_id).iter().find(|r| r.doc_id == doc_id).cloned()
    }

    /// A consistent view of one user's records.
    pub fn snapshot(&self, user_id: &str) -> Arc<Vec<Arc<MemoryRecord>>> {
        self.records.read().get(user_id).cloned().unwrap_or_default()
    }

    pub fn len(&self, user_id: &str) -> usize {
        self.snapshot(user_id).len()
    }

    pub fn is_empty(&self, user_id: &str) -> bool {
        self.len(user_id) == 0
    }

    /// Computes the four matcher lists over a user's records, optionally
    /// restricted to `scope`.
    pub fn match_lists(&self, q: &RetrievalQuery, user_id: &str, scope: Option<&HashSet<String>>) -> MatcherLists {
        let snap = self.snapshot(user_id);
        let query_concepts: BTreeSet<&str> = q.concepts.iter().map(String::as_str).collect();
        let mut lists = MatcherLists::default();
        let soft = |s: f64| s.clamp(0.0, 1.0);
        for r in snap.iter().filter(|r| scope.is_none_or(|s| s.contains(&r.doc_id))) {
            let d = soft(cosine(&q.query_emb, &r.doc_emb));
            if d > 0.0 {
                lists.doc_soft.push((r.doc_id.clone(), d));
            }
            let best = |f: &dyn Fn(&Proposition) -> &[f64]| {
                r.propositions.iter().map(|p| soft(cosine(&q.query_emb, f(p)))).fold(0.0, f64::max)
            };
            let p = best(&|p| &p.prop_emb);
            if p > 0.0 {
                lists.prop_soft.push((r.doc_id.clone(), p));
            }
            let c = best(&|p| &p.cp_emb);
            if c > 0.0 {
                lists.concept_soft.push((r.doc_id.clone(), c));
            }
            if !query_concepts.is_empty() {
                let concepts = r.concepts();
                let shared = query_concepts.iter().filter(|c| concepts.contains(**c)).count();
                if shared > 0 {
                    lists.concept_hard.push((r.doc_id.clone(), shared as f64 / query_concepts.len() as f64));
                }
            }
        }
        for l in [&mut lists.doc_soft, &mut lists.prop_soft, &mut lists.concept_soft, &mut lists.concept_hard] {
            l.sort_by(|(da, a), (db, b)| b.total_cmp(a).then(da.cmp(db)));
        }
        lists
    }

    pub fn retrieve(&self, q: &RetrievalQuery, user_id: &str) -> RankedResult {
        self.match_lists(q, user_id, None).merge(Some(q.k))
    }

    pub fn retrieve_scoped(&self, q: &RetrievalQuery, user_id: &str, scope: &HashSet<String>) -> RankedResult {
        self.match_lists(q, user_id, Some(scope)).merge(Some(q.k))
    }

    /// Convenience: query by text with the store's embedder.
    pub fn search(&self, text: &str, k: usize, user_id: &str) -> RankedResult {
        self.retrieve(&RetrievalQuery::from_text(text, k, self.embedder.as_ref()), user_id)
    }

    /// Drops all of a user's records from memory (durable copies are the
    /// sink's concern).
    pub fn purge_user(&self, user_id: &str) {
        self.records.write().remove(user_id);
    }

    pub fn remove_docs(&self, user_id: &str, doc_ids: &HashSet<String>) {
        let mut all = self.records.write();
        if let Some(part) = all.get_mut(user_id) {
            Arc::make_mut(part).retain(|r| !doc_ids.contains(&r.doc_id));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(user: &str) -> RecordMeta {
        RecordMeta { timestamp: "2024-01-01T00:00:00Z".into(), source: MemorySource::Note, user_id: user.into() }
    }

    #[test]
    fn record_json_round_trip() {
        let store = MemoryStore::default();
        let id = store.ingest("The Yellow River is in China.", meta("u")).unwrap();
        let r = store.get("u", &id).unwrap();
        let back = MemoryRecord::from_json(&r.to_json()).unwrap();
        assert_eq!(&back, r.as_ref());
        assert!(r.to_json().contains("\"schema\":\"mem/v1\""));
    }

    #[test]
    fn users_are_isolated() {
        let store = MemoryStore::default();
        store.ingest("Alice lives in Seattle.", meta("a")).unwrap();
        assert!(store.search("Alice lives in Seattle", 5, "b").entries.is_empty());
        assert_eq!(store.search("Alice lives in Seattle", 5, "a").entries.len(), 1);
    }

    #[test]
    fn insert_advances_ids() {
        let store = MemoryStore::default();
        let id = store.ingest("one", meta("u")).unwrap();
        let mut r = (*store.get("u", &id).unwrap()).clone();
        r.doc_id = "doc-000041".into();
        let other = MemoryStore::default();
        other.insert(r);
        assert_eq!(other.ingest("two", meta("u")).unwrap(), "doc-000042");
    }
}
