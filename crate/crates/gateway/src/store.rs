//! Durable relational store: users, chat sessions, turns, feedback,
//! dialogue memory records and persisted trace events.

use std::path::Path;

use autopilot_core::events::Event;
use autopilot_core::memory::{MemoryRecord, RecordSink};
use parking_lot::Mutex;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    Unavailable(#[from] rusqlite::Error),
    #[error("corrupt row: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct User {
    pub user_id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionRow {
    pub session_id: String,
    pub user_id: String,
    pub title: String,
    pub created_at: String,
    pub closed_at: Option<String>,
    pub turn_count: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct TurnRow {
    pub turn_index: u32,
    pub role: String,
    pub content: String,
    pub task_ref: Option<String>,
    pub status: Option<String>,
    /// For assistant turns: the final prompt in message form plus the reply.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub messages: Option<Box<RawValue>>,
    pub created_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub feedback_id: String,
    pub session_id: String,
    pub turn_index: u32,
    pub original_messages: Box<RawValue>,
    pub edited_response: Option<String>,
    pub suggestion: Option<String>,
    pub created_at: String,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS users (
    user_id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    token_sha256 TEXT NOT NULL UNIQUE,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    title TEXT NOT NULL,
    created_at TEXT NOT NULL,
    closed_at TEXT
);
CREATE TABLE IF NOT EXISTS turns (
    session_id TEXT NOT NULL,
    turn_index INTEGER NOT NULL,
    role TEXT NOT NULL,
    content TEXT NOT NULL,
    task_ref TEXT,
    status TEXT,
    messages TEXT,
    created_at TEXT NOT NULL,
    PRIMARY KEY (session_id, turn_index)
);
CREATE TABLE IF NOT EXISTS feedback (
    feedback_id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    session_id TEXT NOT NULL,
    turn_index INTEGER NOT NULL,
    original_messages TEXT NOT NULL,
    edited_response TEXT,
    suggestion TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS memories (
    user_id TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    record TEXT NOT NULL,
    PRIMARY KEY (user_id, doc_id)
);
CREATE TABLE IF NOT EXISTS events (
    session_id TEXT NOT NULL,
    task_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    event TEXT NOT NULL,
    PRIMARY KEY (task_id, seq)
);
CREATE TRIGGER IF NOT EXISTS turns_append_only BEFORE UPDATE ON turns
BEGIN SELECT RAISE(ABORT, 'turns are append-only'); END;
CREATE TRIGGER IF NOT EXISTS feedback_append_only BEFORE UPDATE ON feedback
BEGIN SELECT RAISE(ABORT, 'feedback is append-only'); END;
";

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn hash_token(token: &str) -> String {
    Sha256::digest(token.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn raw(text: String) -> Result<Box<RawValue>> {
    RawValue::from_string(text).map_err(|e| StoreError::Corrupt(e.to_string()))
}

pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    /// Creates a user and returns it with a fresh bearer token. Only the
    /// token's hash is stored.
    pub fn add_user(&self, name: &str) -> Result<(User, String)> {
        let user = User { user_id: format!("u-{}", uuid::Uuid::new_v4().simple()), name: name.into() };
        let token = format!("ak-{}", uuid::Uuid::new_v4().simple());
        self.conn.lock().execute(
            "INSERT INTO users (user_id, name, token_sha256, created_at) VALUES (?1, ?2, ?3, ?4)",
            params![user.user_id, user.name, hash_token(&token), now()],
        )?;
        Ok((user, token))
    }

    pub fn user_by_token(&self, token: &str) -> Result<Option<User>> {
        Ok(self
            .conn
            .lock()
            .query_row("SELECT user_id, name FROM users WHERE token_sha256 = ?1", [hash_token(token)], |r| {
                Ok(User { user_id: r.get(0)?, name: r.get(1)? })
            })
            .optional()?)
    }

    pub fn users(&self) -> Result<Vec<User>> {
        let conn = self.conn.lock();
        let mut st = conn.prepare("SELECT user_id, name FROM users ORDER BY created_at, user_id")?;
        let rows = st.query_map([], |r| Ok(User { user_id: r.get(0)?, name: r.get(1)? }))?;
        Ok(rows.collect::<std::result::Result<_, _>>()?)
    }

    pub fn create_session(&self, user_id: &str, title: &str) -> Result<SessionRow> {
        let row = SessionRow {
            session_id: format!("s-{}", uuid::Uuid::new_v4().simple()),
            user_id: user_id.into(),
            title: title.into(),
            created_at: now(),
            closed_at: None,
            turn_count: 0,
        };
        self.conn.lock().execute(
            "INSERT INTO sessions (session_id, user_id, title, created_at) VALUES (?1, ?2, ?3, ?4)",
            params![row.session_id, row.user_id, row.title, row.created_at],
        )?;
        Ok(row)
    }

    const SESSION_COLS: &'static str = "s.session_id, s.user_id, s.title, s.created_at, s.closed_at,
        (SELECT COUNT(*) FROM turns t WHERE t.session_id = s.session_id)";

    fn session_row(r: &rusqlite::Row) -> rusqlite::Result<SessionRow> {
        Ok(SessionRow {
            session_id: r.get(0)?,
            user_id: r.get(1)?,
            title: r.get(2)?,
            created_at: r.get(3)?,
            closed_at: r.get(4)?,
            turn_count: r.get(5)?,
        })
    }

    pub fn sessions(&self, user_id: &str) -> Result<Vec<SessionRow>> {
        let conn = self.conn.lock();
        let mut st = conn.prepare(&format!(
            "SELECT {} FROM sessions s WHERE s.user_id = ?1 ORDER BY s.created_at, s.session_id",
            Self::SESSION_COLS
        ))?;
        let rows = st.query_map([user_id], Self::session_row)?;
        Ok(rows.collect::<std::result::Result<_, _>>()?)
    }

    /// The session if it exists and belongs to `user_id`.
    pub fn session(&self, user_id: &str, session_id: &str) -> Result<Option<SessionRow>> {
        Ok(self
            .conn
            .lock()
            .query_row(
                &format!("SELECT {} FROM sessions s WHERE s.session_id = ?1 AND s.user_id = ?2", Self::SESSION_COLS),
                params![session_id, user_id],
                Self::session_row,
            )
            .optional()?)
    }

    pub fn close_session(&self, user_id: &str, session_id: &str) -> Result<bool> {
        let n = self.conn.lock().execute(
            "UPDATE sessions SET closed_at = ?3 WHERE session_id = ?1 AND user_id = ?2 AND closed_at IS NULL",
            params![session_id, user_id, now()],
        )?;
        Ok(n == 1)
    }

    pub fn append_turn(
        &self,
        session_id: &str,
        role: &str,
        content: &str,
        task_ref: Option<&str>,
        status: Option<&str>,
        messages: Option<&str>,
    ) -> Result<u32> {
        let conn = self.conn.lock();
        let tx = conn.unchecked_transaction()?;
        let index: u32 = tx.query_row("SELECT COUNT(*) FROM turns WHERE session_id = ?1", [session_id], |r| r.get(0))?;
        tx.execute(
            "INSERT INTO turns (session_id, turn_index, role, content, task_ref, status, messages, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![session_id, index, role, content, task_ref, status, messages, now()],
        )?;
        tx.commit()?;
        Ok(index)
    }

    pub fn turns(&self, session_id: &str) -> Result<Vec<TurnRow>> {
        let conn = self.conn.lock();
        let mut st = conn.prepare(
            "SELECT turn_index, role, content, task_ref, status, messages, created_at
             FROM turns WHERE session_id = ?1 ORDER BY turn_index",
        )?;
        let rows = st.query_map([session_id], |r| {
            Ok((
                r.get::<_, u32>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, Option<String>>(3)?,
                r.get::<_, Option<String>>(4)?,
                r.get::<_, Option<String>>(5)?,
                r.get::<_, String>(6)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (turn_index, role, content, task_ref, status, messages, created_at) = row?;
            let messages = messages.map(raw).transpose()?;
            out.push(TurnRow { turn_index, role, content, task_ref, status, messages, created_at });
        }
        Ok(out)
    }

    pub fn insert_feedback(&self, user_id: &str, rec: &FeedbackRecord) -> Result<()> {
        self.conn.lock().execute(
            "INSERT INTO feedback (feedback_id, user_id, session_id, turn_index, original_messages, edited_response, suggestion, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                rec.feedback_id,
                user_id,
                rec.session_id,
                rec.turn_index,
                rec.original_messages.get(),
                rec.edited_response,
                rec.suggestion,
                rec.created_at
            ],
        )?;
        Ok(())
    }

    fn feedback_where(&self, clause: &str, args: &[&dyn rusqlite::ToSql]) -> Result<Vec<FeedbackRecord>> {
        let conn = self.conn.lock();
        let mut st = conn.prepare(&format!(
            "SELECT feedback_id, session_id, turn_index, original_messages, edited_response, suggestion, created_at
             FROM feedback WHERE {clause} ORDER BY created_at, feedback_id"
        ))?;
        let rows = st.query_map(args, |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, u32>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, Option<String>>(4)?,
                r.get::<_, Option<String>>(5)?,
                r.get::<_, String>(6)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (feedback_id, session_id, turn_index, original, edited_response, suggestion, created_at) = row?;
            out.push(FeedbackRecord {
                feedback_id,
                session_id,
                turn_index,
                original_messages: raw(original)?,
                edited_response,
                suggestion,
                created_at,
            });
        }
        Ok(out)
    }

    pub fn feedback(&self, user_id: &str, feedback_id: &str) -> Result<Option<FeedbackRecord>> {
        Ok(self.feedback_where("feedback_id = ?1 AND user_id = ?2", &[&feedback_id, &user_id])?.pop())
    }

    pub fn feedback_for_user(&self, user_id: &str) -> Result<Vec<FeedbackRecord>> {
        self.feedback_where("user_id = ?1", &[&user_id])
    }

    pub fn save_record(&self, record: &MemoryRecord) -> Result<()> {
        self.conn.lock().execute(
            "INSERT OR REPLACE INTO memories (user_id, doc_id, record) VALUES (?1, ?2, ?3)",
            params![record.meta.user_id, record.doc_id, record.to_json()],
        )?;
        Ok(())
    }

    pub fn load_records(&self) -> Result<Vec<MemoryRecord>> {
        let conn = self.conn.lock();
        let mut st = conn.prepare("SELECT record FROM memories ORDER BY rowid")?;
        let rows = st.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for row in rows {
            out.push(MemoryRecord::from_json(&row?).map_err(|e| StoreError::Corrupt(e.to_string()))?);
        }
        Ok(out)
    }

    pub fn append_event(&self, session_id: &str, root_task: &str, event: &Event) -> Result<()> {
        self.conn.lock().execute(
            "INSERT INTO events (session_id, task_id, seq, event) VALUES (?1, ?2, ?3, ?4)",
            params![session_id, root_task, event.seq as i64, event.to_json()],
        )?;
        Ok(())
    }

    /// Persisted events of one session, optionally one root task, in order.
    pub fn events(&self, session_id: &str, root_task: Option<&str>) -> Result<Vec<Event>> {
        let conn = self.conn.lock();
        let mut st = conn.prepare(
            "SELECT event FROM events WHERE session_id = ?1 AND (?2 IS NULL OR task_id = ?2) ORDER BY rowid",
        )?;
        let rows = st.query_map(params![session_id, root_task], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for row in rows {
            out.push(serde_json::from_str(&row?).map_err(|e| StoreError::Corrupt(e.to_string()))?);
        }
        Ok(out)
    }
}

/// Writes memory records through to the store as they are ingested.
pub struct StoreSink(pub std::sync::Arc<Store>);

impl RecordSink for StoreSink {
    fn save(&self, record: &MemoryRecord) -> std::result::Result<(), String> {
        self.0.save_record(record).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turns_cannot_be_rewritten() {
        let s = Store::open_in_memory().unwrap();
        let (u, _) = s.add_user("a").unwrap();
        let sess = s.create_session(&u.user_id, "t").unwrap();
        s.append_turn(&sess.session_id, "user", "hi", None, None, None).unwrap();
        let err = s.conn.lock().execute("UPDATE turns SET content = 'x'", []);
        assert!(err.is_err());
        assert_eq!(s.turns(&sess.session_id).unwrap()[0].content, "hi");
    }

    #[test]
    fn tokens_resolve_to_users() {
        let s = Store::open_in_memory().unwrap();
        let (u, token) = s.add_user("ada").unwrap();
        assert_eq!(s.user_by_token(&token).unwrap(), Some(u));
        assert_eq!(s.user_by_token("nope").unwrap(), None);
    }
}
