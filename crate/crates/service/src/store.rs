//! Append-only per-session event logs.
//!
//! Each session lives in `<data_dir>/sessions/<id>.jsonl`. Every event is
//! written as one line and synced before the caller proceeds. Once a log
//! holds enough events it is compacted into a single snapshot line, written
//! to a temporary file and renamed over the original.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use tokio::sync::Mutex;

use crate::model::{Event, LogLine, SessionState, LOG_SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

pub struct EventLog {
    path: PathBuf,
    file: File,
    events: usize,
}

impl EventLog {
    fn create(path: PathBuf) -> Result<Self, StoreError> {
        let file = OpenOptions::new().create_new(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(EventLog { path, file, events: 0 })
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(&LogLine { v: LOG_SCHEMA_VERSION, event: event.clone() })
            .expect("events always serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.events += 1;
        Ok(())
    }

    pub fn events(&self) -> usize {
        self.events
    }

    /// Replaces the log with one snapshot line.
    pub fn compact(&mut self, state: &SessionState) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("jsonl.tmp");
        let mut line = serde_json::to_vec(&LogLine {
            v: LOG_SCHEMA_VERSION,
            event: Event::Snapshot { state: Box::new(state.clone()) },
        })
        .expect("events always serialize");
        line.push(b'\n');
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&line).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        if let Some(dir) = self.path.parent() {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        self.file = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
        self.events = 1;
        Ok(())
    }
}

pub struct SessionEntry {
    pub state: SessionState,
    pub log: EventLog,
}

impl SessionEntry {
    /// Logs `event`, applies it, and compacts once the log reaches
    /// `compact_every` events.
    pub fn record(&mut self, event: Event, compact_every: usize) -> Result<(), StoreError> {
        self.log.append(&event)?;
        self.state.apply(&event);
        if compact_every > 0 && self.log.events() >= compact_every {
            self.log.compact(&self.state)?;
        }
        Ok(())
    }
}

pub type SharedEntry = Arc<Mutex<SessionEntry>>;

pub struct Store {
    dir: PathBuf,
    sessions: RwLock<BTreeMap<String, SharedEntry>>,
}

/// Replays one log. A final line without its newline is the remains of an
/// interrupted write that was never acknowledged; it is dropped and the file
/// truncated to the last complete line.
fn replay(path: &Path) -> Result<(SessionState, usize), StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!("{}: dropping {} bytes of an interrupted write", path.display(), bytes.len() - complete);
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    let mut state: Option<SessionState> = None;
    let mut events = 0;
    for (i, line) in BufReader::new(&bytes[..complete]).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let corrupt = |message: String| StoreError::Corrupt { path: path.to_path_buf(), line: i + 1, message };
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if parsed.v != LOG_SCHEMA_VERSION {
            return Err(corrupt(format!("unsupported log version {}", parsed.v)));
        }
        events += 1;
        match (&mut state, parsed.event) {
            (None, Event::Created { session, topic }) => state = Some(SessionState::new(session, topic)),
            (None, Event::Snapshot { state: s }) => state = Some(*s),
            (None, _) => return Err(corrupt("log does not start with a created or snapshot event".into())),
            (Some(_), Event::Created { .. } | Event::Snapshot { .. }) => {
                return Err(corrupt("second created or snapshot event".into()))
            }
            (Some(s), e) => s.apply(&e),
        }
    }
    let state =
        state.ok_or_else(|| StoreError::Corrupt { path: path.to_path_buf(), line: 0, message: "empty log".into() })?;
    Ok((state, events))
}

impl Store {
    /// Opens `dir`, replaying every session log found there.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let sessions_dir = dir.join("sessions");
        fs::create_dir_all(&sessions_dir).map_err(io_err(&sessions_dir))?;
        let mut sessions = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&sessions_dir)
            .map_err(io_err(&sessions_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        for path in paths {
            match path.extension().and_then(|e| e.to_str()) {
                Some("jsonl") => {}
                Some("tmp") => {
                    // A compaction that never reached its rename.
                    let _ = fs::remove_file(&path);
                    continue;
                }
                _ => continue,
            }
            let (state, events) = replay(&path)?;
            let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
            let id = state.record.session_id.clone();
            sessions.insert(id, Arc::new(Mutex::new(SessionEntry { state, log: EventLog { path, file, events } })));
        }
        Ok(Store { dir: sessions_dir, sessions: RwLock::new(sessions) })
    }

    pub fn get(&self, session_id: &str) -> Option<SharedEntry> {
        self.sessions.read().expect("store lock poisoned").get(session_id).cloned()
    }

    /// All sessions in id order.
    pub fn all(&self) -> Vec<SharedEntry> {
        self.sessions.read().expect("store lock poisoned").values().cloned().collect()
    }

    /// Writes the created event and registers the session.
    pub fn create(&self, state: SessionState) -> Result<SharedEntry, StoreError> {
        let id = state.record.session_id.clone();
        let mut log = EventLog::create(self.dir.join(format!("{id}.jsonl")))?;
        log.append(&Event::Created { session: state.record.clone(), topic: state.topic.clone() })?;
        let entry = Arc::new(Mutex::new(SessionEntry { state, log }));
        self.sessions.write().expect("store lock poisoned").insert(id, entry.clone());
        Ok(entry)
    }
}
