//! Session-scoped file handles and the scratch index behind them.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};

use super::{sniff_media_type, ExtractorRegistry, FileConfig, FileError, FileHandle, FileMeta};
use crate::memory::MemoryStore;

struct Entry {
    user_id: String,
    session_id: String,
    loaded_at: Instant,
    handle: Arc<Mutex<FileHandle>>,
}

/// Holds uploaded files. Pages are indexed into a scratch memory store kept
/// apart from durable memory, and dropped when the owning session closes.
pub struct FileRegistry {
    index: Arc<MemoryStore>,
    extractors: ExtractorRegistry,
    config: FileConfig,
    files: RwLock<HashMap<String, Entry>>,
    next_id: AtomicU64,
}

impl Default for FileRegistry {
    fn default() -> Self {
        Self::new(Arc::new(MemoryStore::default().with_prefix("file")), ExtractorRegistry::default(), FileConfig::default())
    }
}

impl FileRegistry {
    pub fn new(index: Arc<MemoryStore>, extractors: ExtractorRegistry, config: FileConfig) -> Self {
        Self { index, extractors, config, files: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1) }
    }

    pub fn config(&self) -> &FileConfig {
        &self.config
    }

    pub fn index(&self) -> &Arc<MemoryStore> {
        &self.index
    }

    pub fn load(&self, user_id: &str, session_id: &str, bytes: &[u8], filename: &str) -> Result<String, FileError> {
        let media_type = sniff_media_type(bytes, filename);
        let extractor = self
            .extractors
            .for_media_type(&media_type)
            .ok_or_else(|| FileError::UnsupportedMediaType(media_type.clone()))?;
        let file_id = format!("file-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let handle = FileHandle::load(
            file_id.clone(),
            bytes,
            filename,
            &media_type,
            extractor.as_ref(),
            self.index.clone(),
            user_id,
            &self.config,
        )?;
        self.files.write().insert(
            file_id.clone(),
            Entry {
                user_id: user_id.into(),
                session_id: session_id.into(),
                loaded_at: Instant::now(),
                handle: Arc::new(Mutex::new(handle)),
            },
        );
        Ok(file_id)
    }

    /// Looks a file up on behalf of `user_id`; other users' files are
    /// indistinguishable from missing ones.
    pub fn get(&self, user_id: &str, file_id: &str) -> Option<Arc<Mutex<FileHandle>>> {
        self.files.read().get(file_id).filter(|e| e.user_id == user_id).map(|e| e.handle.clone())
    }

    /// Like [`get`](Self::get), additionally requiring the file to belong to `session_id`.
    pub fn get_in_session(&self, user_id: &str, session_id: &str, file_id: &str) -> Option<Arc<Mutex<FileHandle>>> {
        self.files
            .read()
            .get(file_id)
            .filter(|e| e.user_id == user_id && e.session_id == session_id)
            .map(|e| e.handle.clone())
    }

    pub fn meta(&self, user_id: &str, file_id: &str) -> Option<FileMeta> {
        self.get(user_id, file_id).map(|h| h.lock().meta.clone())
    }

    pub fn session_files(&self, user_id: &str, session_id: &str) -> Vec<(String, FileMeta)> {
        let files = self.files.read();
        let mut out: Vec<_> = files
            .iter()
            .filter(|(_, e)| e.user_id == user_id && e.session_id == session_id)
            .map(|(id, e)| (id.clone(), e.handle.lock().meta.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn remove_where(&self, pred: impl Fn(&Entry) -> bool) -> usize {
        let removed: Vec<Entry> = {
            let mut files = self.files.write();
            let ids: Vec<String> = files.iter().filter(|(_, e)| pred(e)).map(|(id, _)| id.clone()).collect();
            ids.iter().filter_map(|id| files.remove(id)).collect()
        };
        for e in &removed {
            let docs: HashSet<String> = e.handle.lock().index_ref.iter().cloned().collect();
            self.index.remove_docs(&e.user_id, &docs);
        }
        removed.len()
    }

    /// Drops a session's files and their index entries.
    pub fn close_session(&self, session_id: &str) -> usize {
        self.remove_where(|e| e.session_id == session_id)
    }

    /// Drops files loaded more than `ttl` ago.
    pub fn expire(&self, ttl: Duration) -> usize {
        let now = Instant::now();
        self.remove_where(|e| now.duration_since(e.loaded_at) > ttl)
    }

    pub fn len(&self) -> usize {
        self.files.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
