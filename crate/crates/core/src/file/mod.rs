//! File perception: paginated, indexed handles over uploaded documents,
//! with Operate / Navigate / Search / Read.

mod extract;
mod registry;

pub use extract::*;
pub use registry::*;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{MemoryError, MemorySource, MemoryStore, RecordMeta, RetrievalQuery};
use crate::prompt::{condense_trajectory, Trajectory, Turn};
use crate::tokenizer::ReferenceTokenizer;

pub const DEFAULT_PAGE_SIZE: usize = 3_000;
pub const MAX_FIND_HITS: usize = 100;
pub const DEFAULT_READ_BUDGET: usize = 4_000;
pub const QUESTION_HITS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FileError {
    #[error("unsupported media type {0}")]
    UnsupportedMediaType(String),
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("page range {start}..={end} is outside 0..{page_count}")]
    RangeOutOfBounds { start: usize, end: usize, page_count: usize },
    #[error("selected content needs at least {required} tokens but the budget is {budget}")]
    BudgetUnsatisfiable { required: usize, budget: usize },
    #[error("indexing failed: {0}")]
    Index(#[from] MemoryError),
    #[error("no file {0}")]
    UnknownFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub filename: String,
    pub media_type: String,
    pub page_count: usize,
    pub char_count: usize,
    /// For paged sources: the 1-based (first, last) source page each
    /// pagination page spans.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_pages: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileConfig {
    pub page_size: usize,
    pub read_budget: usize,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self { page_size: DEFAULT_PAGE_SIZE, read_budget: DEFAULT_READ_BUDGET }
    }
}

/// Splits `text` into pages of at most `page_size` chars. A page ends at the
/// last paragraph break (blank line) within the limit, else the last line
/// break, else the last whitespace, else exactly at the limit. Breaks in the
/// first half of the window are ignored so pages don't degenerate. Pages
/// concatenate back to `text` exactly.
pub fn paginate(text: &str, page_size: usize) -> Vec<String> {
    let page_size = page_size.max(1);
    let chars: Vec<char> = text.chars().collect();
    let mut pages = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let limit = start + page_size;
        if limit >= chars.len() {
            pages.push(chars[start..].iter().collect());
            break;
        }
        let floor = start + page_size / 2;
        let window = (floor.max(start + 1)..=limit).rev();
        let cut = window
            .clone()
            .find(|&c| c >= 2 && chars[c - 1] == '\n' && chars[c - 2] == '\n')
            .or_else(|| window.clone().find(|&c| chars[c - 1] == '\n'))
            .or_else(|| window.clone().find(|&c| chars[c - 1].is_whitespace()))
            .unwrap_or(limit);
        pages.push(chars[start..cut].iter().collect());
        start = cut;
    }
    pages
}

/// Case-folds char by char, remembering each folded char's source index.
fn fold(s: &str) -> (Vec<char>, Vec<usize>) {
    let mut out = Vec::with_capacity(s.len());
    let mut origin = Vec::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        for l in c.to_lowercase() {
            out.push(l);
            origin.push(i);
        }
    }
    (out, origin)
}

/// Start positions (in chars of `hay`) of case-insensitive,
/// non-overlapping, left-to-right occurrences of `needle`.
pub fn find_occurrences(hay: &str, needle: &str) -> Vec<usize> {
    let (h, origin) = fold(hay);
    let (n, _) = fold(needle);
    let mut hits = Vec::new();
    if n.is_empty() {
        return hits;
    }
    let mut i = 0;
    while i + n.len() <= h.len() {
        if h[i..i + n.len()] == n[..] {
            hits.push(origin[i]);
            i += n.len();
        } else {
            i += 1;
        }
    }
    hits
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FileOp {
    CountOccurrences { term: String },
    FindTerm { term: String },
    /// Inclusive page range.
    ExtractRange { start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub page: usize,
    pub char_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpResult {
    Count(usize),
    Hits { hits: Vec<Hit>, capped: bool },
    Text(String),
}

impl fmt::Display for OpResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Count(n) => write!(f, "{n}"),
            Self::Hits { hits, capped } => {
                let list: Vec<String> = hits.iter().map(|h| format!("page {} offset {}", h.page, h.char_offset)).collect();
                write!(f, "{} hit(s){}: {}", hits.len(), if *capped { " (capped)" } else { "" }, list.join("; "))
            }
            Self::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavTarget {
    Next,
    Prev,
    Page(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub page: usize,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadRequest {
    Range { start: usize, end: usize },
    Question(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadPassage {
    pub page: usize,
    pub citation: String,
    /// Page text, or the omission marker if it was dropped for budget.
    pub content: String,
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadResult {
    pub passages: Vec<ReadPassage>,
    pub token_count: usize,
}

impl ReadResult {
    pub fn render(&self) -> String {
        self.passages
            .iter()
            .map(|p| if p.omitted { p.content.clone() } else { format!("[{}]\n{}", p.citation, p.content) })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub struct FileHandle {
    pub file_id: String,
    pub pages: Vec<String>,
    pub current_page: usize,
    pub meta: FileMeta,
    /// Memory doc ids, one per indexed page.
    pub index_ref: Vec<String>,
    page_of_doc: HashMap<String, usize>,
    page_starts: Vec<usize>,
    index: Arc<MemoryStore>,
    owner: String,
}

impl fmt::Debug for FileHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FileHandle")
            .field("file_id", &self.file_id)
            .field("current_page", &self.current_page)
            .field("meta", &self.meta)
            .finish_non_exhaustive()
    }
}

fn now_secs() -> String {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0).to_string()
}

impl FileHandle {
    /// Extracts, paginates and indexes a file into `index` under `owner`.
    #[allow(clippy::too_many_arguments)]
    pub fn load(
        file_id: impl Into<String>,
        bytes: &[u8],
        filename: &str,
        media_type: &str,
        extractor: &dyn FileExtractor,
        index: Arc<MemoryStore>,
        owner: &str,
        config: &FileConfig,
    ) -> Result<Self, FileError> {
        if !extractor.media_types().contains(&media_type) {
            return Err(FileError::UnsupportedMediaType(media_type.into()));
        }
        let extracted = extractor.extract(bytes).map_err(|e| match e {
            ExtractError::Unsupported(m) => FileError::UnsupportedMediaType(m),
            ExtractError::Failed(m) => FileError::ExtractionFailed(m),
        })?;
        if extracted.text.trim().is_empty() {
            return Err(FileError::ExtractionFailed("no text content".into()));
        }
        let pages = paginate(&extracted.text, config.page_size);
        let mut page_starts = Vec::with_capacity(pages.len());
        let mut at = 0;
        for p in &pages {
            page_starts.push(at);
            at += p.chars().count();
        }
        let source_pages = if extracted.page_map.is_empty() {
            Vec::new()
        } else {
            let src = |offset: usize| extracted.page_map.partition_point(|&s| s <= offset).max(1);
            pages
                .iter()
                .zip(&page_starts)
                .map(|(p, &s)| (src(s), src(s + p.chars().count().saturating_sub(1))))
                .collect()
        };

        let ts = now_secs();
        let mut index_ref = Vec::new();
        let mut page_of_doc = HashMap::new();
        for (i, p) in pages.iter().enumerate() {
            if p.trim().is_empty() {
                continue;
            }
            let meta = RecordMeta { timestamp: ts.clone(), source: MemorySource::File, user_id: owner.into() };
            match index.ingest(p, meta) {
                Ok(id) => {
                    page_of_doc.insert(id.clone(), i);
                    index_ref.push(id);
                }
                Err(MemoryError::EmptyText | MemoryError::Embedder(_)) => {
                    tracing::debug!(page = i, "page not indexable");
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Self {
            file_id: file_id.into(),
            meta: FileMeta {
                filename: filename.into(),
                media_type: media_type.into(),
                page_count: pages.len(),
                char_count: at,
                source_pages,
            },
            pages,
            current_page: 0,
            index_ref,
            page_of_doc,
            page_starts,
            index,
            owner: owner.into(),
        })
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn text(&self) -> String {
        self.pages.concat()
    }

    fn check(&self, start: usize, end: usize) -> Result<(), FileError> {
        if start > end || end >= self.pages.len() {
            return Err(FileError::RangeOutOfBounds { start, end, page_count: self.pages.len() });
        }
        Ok(())
    }

    pub fn citation(&self, page: usize) -> String {
        let mut c = format!("{} page {} of {}", self.meta.filename, page + 1, self.pages.len());
        if let Some(&(a, b)) = self.meta.source_pages.get(page) {
            if a == b {
                c.push_str(&format!(", pdf p. {a}"));
            } else {
                c.push_str(&format!(", pdf pp. {a}-{b}"));
            }
        }
        c
    }

    pub fn operate(&self, op: &FileOp) -> Result<OpResult, FileError> {
        match op {
            FileOp::CountOccurrences { term } => Ok(OpResult::Count(find_occurrences(&self.text(), term).len())),
            FileOp::FindTerm { term } => {
                let all = find_occurrences(&self.text(), term);
                let capped = all.len() > MAX_FIND_HITS;
                let hits = all
                    .into_iter()
                    .take(MAX_FIND_HITS)
                    .map(|off| {
                        let page = self.page_starts.partition_point(|&s| s <= off) - 1;
                        Hit { page, char_offset: off - self.page_starts[page] }
                    })
                    .collect();
                Ok(OpResult::Hits { hits, capped })
            }
            FileOp::ExtractRange { start, end } => {
                self.check(*start, *end)?;
                Ok(OpResult::Text(self.pages[*start..=*end].concat()))
            }
        }
    }

    pub fn navigate(&mut self, target: NavTarget) -> Result<&str, FileError> {
        let to = match target {
            NavTarget::Next => self.current_page + 1,
            NavTarget::Prev => self.current_page.checked_sub(1).ok_or(FileError::RangeOutOfBounds {
                start: 0,
                end: 0,
                page_count: self.pages.len(),
            })?,
            NavTarget::Page(p) => p,
        };
        self.check(to, to)?;
        self.current_page = to;
        Ok(&self.pages[to])
    }

    /// Semantic search over this file's pages only.
    pub fn search(&self, query: &str, k: usize) -> Vec<Passage> {
        let scope: HashSet<String> = self.index_ref.iter().cloned().collect();
        let q = RetrievalQuery::from_text(query, k, self.index.embedder());
        self.index
            .retrieve_scoped(&q, &self.owner, &scope)
            .entries
            .into_iter()
            .filter_map(|e| {
                let page = *self.page_of_doc.get(&e.doc_id)?;
                Some(Passage { page, score: e.score, text: self.pages[page].clone() })
            })
            .collect()
    }

    /// Packages pages for the policy under `budget` tokens. Oldest pages are
    /// replaced with the omission marker first; the last is always kept.
    pub fn read(&self, request: &ReadRequest, budget: usize) -> Result<ReadResult, FileError> {
        let pages: Vec<usize> = match request {
            ReadRequest::Range { start, end } => {
                self.check(*start, *end)?;
                (*start..=*end).collect()
            }
            ReadRequest::Question(q) => {
                let mut hits: Vec<usize> = self.search(q, QUESTION_HITS).into_iter().map(|p| p.page).collect();
                // Present best hit last so it is the one guaranteed to survive.
                hits.reverse();
                hits
            }
        };
        let header = |p: usize| format!("[{}]\n", self.citation(p));
        let traj = Trajectory::new(pages.iter().map(|&p| Turn::observation(format!("{}{}", header(p), self.pages[p]))).collect());
        let condensed = condense_trajectory(&traj, budget, &ReferenceTokenizer)
            .map_err(|e| FileError::BudgetUnsatisfiable { required: e.required, budget: e.budget })?;
        let passages = pages
            .iter()
            .zip(&condensed.turns)
            .map(|(&p, t)| {
                let h = header(p);
                let content = t.content.strip_prefix(&h).unwrap_or(&t.content).to_string();
                let omitted = !t.content.starts_with(&h);
                ReadPassage { page: p, citation: self.citation(p), content, omitted }
            })
            .collect();
        Ok(ReadResult { passages, token_count: condensed.token_count(&ReferenceTokenizer) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(text: &str, page_size: usize) -> FileHandle {
        let store = Arc::new(MemoryStore::default().with_prefix("file"));
        let cfg = FileConfig { page_size, ..Default::default() };
        FileHandle::load("f1", text.as_bytes(), "t.txt", "text/plain", &PlainTextExtractor, store, "u", &cfg).unwrap()
    }

    #[test]
    fn paginate_snaps_to_paragraphs() {
        let para = format!("{}\n\n", "x".repeat(998));
        let text = para.repeat(10);
        let pages = paginate(&text, 3000);
        assert_eq!(pages.len(), 4);
        assert_eq!(pages[0].len(), 3000);
        assert!(pages.iter().all(|p| p.ends_with("\n\n")));
        assert_eq!(pages.concat(), text);
    }

    #[test]
    fn paginate_hard_cut_without_breaks() {
        let text = "y".repeat(7000);
        let pages = paginate(&text, 3000);
        assert_eq!(pages.iter().map(String::len).collect::<Vec<_>>(), vec![3000, 3000, 1000]);
    }

    #[test]
    fn tiny_and_empty() {
        assert_eq!(handle("a", 3000).page_count(), 1);
        let store = Arc::new(MemoryStore::default());
        let e = FileHandle::load("f", b"", "e.txt", "text/plain", &PlainTextExtractor, store, "u", &FileConfig::default());
        assert!(matches!(e, Err(FileError::ExtractionFailed(_))));
    }

    #[test]
    fn count_is_case_insensitive_and_non_overlapping() {
        assert_eq!(find_occurrences("aaaa", "aa").len(), 2);
        assert_eq!(find_occurrences("HTML html Html", "html").len(), 3);
        assert_eq!(find_occurrences("abc", "").len(), 0);
    }

    #[test]
    fn navigate_bounds() {
        let mut h = handle(&"word ".repeat(100), 100);
        let first = h.pages[0].clone();
        assert!(matches!(h.navigate(NavTarget::Prev), Err(FileError::RangeOutOfBounds { .. })));
        h.navigate(NavTarget::Next).unwrap();
        assert_eq!(h.navigate(NavTarget::Prev).unwrap(), first);
        let last = h.page_count() - 1;
        h.navigate(NavTarget::Page(last)).unwrap();
        assert!(h.navigate(NavTarget::Next).is_err());
        assert_eq!(h.current_page, last);
    }

    #[test]
    fn find_term_offsets() {
        let h = handle("alpha beta\n\ngamma beta", 12);
        let OpResult::Hits { hits, .. } = h.operate(&FileOp::FindTerm { term: "BETA".into() }).unwrap() else { panic!() };
        assert_eq!(hits, vec![Hit { page: 0, char_offset: 6 }, Hit { page: 1, char_offset: 6 }]);
    }
}
