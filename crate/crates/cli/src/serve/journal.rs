//! Append-only per-session event log, replayed on startup.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        model: String,
        checkpoint: String,
        #[serde(rename = "T")]
        horizon: usize,
        simulate_seed: Option<u64>,
        created_at: u64,
    },
    Outcome {
        session_id: String,
        step: usize,
        y: Vec<f64>,
        request_id: Option<String>,
    },
}

#[derive(Debug, Clone)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Journal { dir })
    }

    fn file(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    pub fn append(&self, session_id: &str, event: &Event) -> std::io::Result<()> {
        let mut line = serde_json::to_string(event).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.file(session_id))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }

    /// Events of every journaled session, sessions ordered by file name.
    pub fn replay(&self) -> std::io::Result<Vec<Vec<Event>>> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files.iter().map(|p| read_events(p)).collect()
    }
}

fn read_events(path: &Path) -> std::io::Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(e) => out.push(e),
            // A torn final line from a crash is dropped.
            Err(_) => break,
        }
    }
    Ok(out)
}
