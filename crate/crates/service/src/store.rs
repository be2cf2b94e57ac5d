//! SQLite persistence.
//!
//! Schema (one file, WAL journal):
//!
//! ```text
//! rooms          room_id PK, spec JSON, created_at
//! current        (room_id, seat_id) PK, state, observation JSON, last_updated
//! observations   id PK, room_id, seat_id, frame_id, timestamp, state, observation JSON
//! frames         id PK, room_id, frame_id, received_at, report JSON
//! last_frame     room_id PK, frame_id, image PNG, scene JSON
//! announcements  id PK, title, body, created_at
//! ```
//!
//! A frame's observations, current states and log entry are written in one
//! transaction.

use std::path::Path;
use std::sync::Mutex;

use rusqlite::{Connection, OptionalExtension, params};
use seatwatch_core::pipeline::{FrameReport, SeatObservation, SeatState};
use serde::{Deserialize, Serialize};

use crate::model::{Announcement, RoomSpec};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("room '{0}' already exists")]
    Duplicate(String),
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
    #[error("stored record is corrupt: {0}")]
    Corrupt(#[from] serde_json::Error),
}

pub type StoreResult<T> = Result<T, StoreError>;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS rooms (
    room_id    TEXT PRIMARY KEY,
    spec       TEXT NOT NULL,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS current (
    room_id      TEXT NOT NULL REFERENCES rooms(room_id),
    seat_id      INTEGER NOT NULL,
    state        TEXT NOT NULL,
    observation  TEXT NOT NULL,
    last_updated REAL NOT NULL,
    PRIMARY KEY (room_id, seat_id)
);
CREATE TABLE IF NOT EXISTS observations (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    room_id     TEXT NOT NULL REFERENCES rooms(room_id),
    seat_id     INTEGER NOT NULL,
    frame_id    TEXT NOT NULL,
    timestamp   REAL NOT NULL,
    state       TEXT NOT NULL,
    observation TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS observations_by_seat ON observations (room_id, seat_id, timestamp, id);
CREATE TABLE IF NOT EXISTS frames (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    room_id     TEXT NOT NULL REFERENCES rooms(room_id),
    frame_id    TEXT NOT NULL,
    received_at REAL NOT NULL,
    report      TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS last_frame (
    room_id  TEXT PRIMARY KEY REFERENCES rooms(room_id),
    frame_id TEXT NOT NULL,
    image    BLOB NOT NULL,
    scene    TEXT
);
CREATE TABLE IF NOT EXISTS announcements (
    id         INTEGER PRIMARY KEY AUTOINCREMENT,
    title      TEXT NOT NULL,
    body       TEXT NOT NULL,
    created_at REAL NOT NULL
);
";

/// The frame a room last processed, kept for re-runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredFrame {
    pub frame_id: String,
    pub png: Vec<u8>,
    pub scene: Option<String>,
}

/// State of one seat as persisted.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentSeat {
    pub observation: SeatObservation,
    pub last_updated: f64,
}

pub struct Store {
    conn: Mutex<Connection>,
}

fn state_name(state: SeatState) -> String {
    serde_json::to_value(state).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

impl Store {
    pub fn open(path: &Path) -> StoreResult<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        // A panic while holding the lock leaves SQLite itself consistent.
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Folds the WAL back into the main file.
    pub fn checkpoint(&self) -> StoreResult<()> {
        self.conn().query_row("PRAGMA wal_checkpoint(TRUNCATE)", [], |_| Ok(()))?;
        Ok(())
    }

    pub fn insert_room(&self, spec: &RoomSpec, created_at: f64) -> StoreResult<()> {
        let conn = self.conn();
        let json = serde_json::to_string(spec)?;
        match conn.execute("INSERT INTO rooms (room_id, spec, created_at) VALUES (?1, ?2, ?3)", params![spec.room_id, json, created_at]) {
            Ok(_) => Ok(()),
            Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == rusqlite::ErrorCode::ConstraintViolation => {
                Err(StoreError::Duplicate(spec.room_id.clone()))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn room(&self, room_id: &str) -> StoreResult<Option<RoomSpec>> {
        let conn = self.conn();
        let json: Option<String> = conn
            .query_row("SELECT spec FROM rooms WHERE room_id = ?1", [room_id], |r| r.get(0))
            .optional()?;
        Ok(json.map(|j| serde_json::from_str(&j)).transpose()?)
    }

    pub fn rooms(&self) -> StoreResult<Vec<RoomSpec>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT spec FROM rooms ORDER BY created_at, room_id")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    pub fn current(&self, room_id: &str) -> StoreResult<Vec<CurrentSeat>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT observation, last_updated FROM current WHERE room_id = ?1 ORDER BY seat_id")?;
        let rows = stmt.query_map([room_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, f64>(1)?)))?;
        let mut out = Vec::new();
        for row in rows {
            let (json, last_updated) = row?;
            out.push(CurrentSeat { observation: serde_json::from_str(&json)?, last_updated });
        }
        Ok(out)
    }

    /// Latest observation timestamp in a room, if any.
    pub fn latest_timestamp(&self, room_id: &str) -> StoreResult<Option<f64>> {
        let conn = self.conn();
        Ok(conn.query_row("SELECT MAX(timestamp) FROM observations WHERE room_id = ?1", [room_id], |r| r.get(0))?)
    }

    pub fn history(&self, room_id: &str, seat_id: u32, since: f64) -> StoreResult<Vec<SeatObservation>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT observation FROM observations WHERE room_id = ?1 AND seat_id = ?2 AND timestamp >= ?3 ORDER BY timestamp, id",
        )?;
        let rows = stmt.query_map(params![room_id, seat_id, since], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for json in rows {
            out.push(serde_json::from_str(&json?)?);
        }
        Ok(out)
    }

    /// Persists everything a processed frame produced, atomically.
    pub fn commit_frame(
        &self,
        report: &FrameReport,
        report_json: &str,
        received_at: f64,
        frame: &StoredFrame,
    ) -> StoreResult<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for obs in &report.observations {
            let json = serde_json::to_string(obs)?;
            let state = state_name(obs.state);
            tx.execute(
                "INSERT INTO observations (room_id, seat_id, frame_id, timestamp, state, observation) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![report.room_id, obs.seat_id, obs.frame_id, obs.timestamp, state, json],
            )?;
            tx.execute(
                "INSERT INTO current (room_id, seat_id, state, observation, last_updated) VALUES (?1, ?2, ?3, ?4, ?5)
                 ON CONFLICT (room_id, seat_id) DO UPDATE SET state = excluded.state, observation = excluded.observation, last_updated = excluded.last_updated",
                params![report.room_id, obs.seat_id, state, json, obs.timestamp],
            )?;
        }
        tx.execute(
            "INSERT INTO frames (room_id, frame_id, received_at, report) VALUES (?1, ?2, ?3, ?4)",
            params![report.room_id, report.frame_id, received_at, report_json],
        )?;
        tx.execute(
            "INSERT INTO last_frame (room_id, frame_id, image, scene) VALUES (?1, ?2, ?3, ?4)
             ON CONFLICT (room_id) DO UPDATE SET frame_id = excluded.frame_id, image = excluded.image, scene = excluded.scene",
            params![report.room_id, frame.frame_id, frame.png, frame.scene],
        )?;
        tx.commit()?;
        Ok(())
    }

    pub fn frame_count(&self, room_id: &str) -> StoreResult<u64> {
        let conn = self.conn();
        let n: i64 = conn.query_row("SELECT COUNT(*) FROM frames WHERE room_id = ?1", [room_id], |r| r.get(0))?;
        Ok(n as u64)
    }

    pub fn last_frame(&self, room_id: &str) -> StoreResult<Option<StoredFrame>> {
        let conn = self.conn();
        Ok(conn
            .query_row("SELECT frame_id, image, scene FROM last_frame WHERE room_id = ?1", [room_id], |r| {
                Ok(StoredFrame { frame_id: r.get(0)?, png: r.get(1)?, scene: r.get(2)? })
            })
            .optional()?)
    }

    pub fn insert_announcement(&self, title: &str, body: &str, now: f64) -> StoreResult<Announcement> {
        let conn = self.conn();
        let prev: Option<f64> = conn.query_row("SELECT MAX(created_at) FROM announcements", [], |r| r.get(0))?;
        let created_at = prev.map_or(now, |p| p.max(now));
        conn.execute(
            "INSERT INTO announcements (title, body, created_at) VALUES (?1, ?2, ?3)",
            params![title, body, created_at],
        )?;
        Ok(Announcement { id: conn.last_insert_rowid(), title: title.to_string(), body: body.to_string(), created_at })
    }

    pub fn announcements(&self) -> StoreResult<Vec<Announcement>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT id, title, body, created_at FROM announcements ORDER BY id DESC")?;
        let rows = stmt.query_map([], |r| {
            Ok(Announcement { id: r.get(0)?, title: r.get(1)?, body: r.get(2)?, created_at: r.get(3)? })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }
}
