use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError};
use crate::text::collapse_whitespace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Chat,
    Embed,
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryKind::Chat => "chat",
            EntryKind::Embed => "embed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub kind: EntryKind,
    pub request: Value,
    pub response: Value,
}

/// Append-only fingerprint → response log, one JSON entry per line.
#[derive(Debug, Default)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    index: HashMap<String, usize>,
    path: Option<PathBuf>,
    sink: Option<File>,
}

pub(crate) fn normalize_chat(req: &ChatRequest) -> Value {
    json!({
        "kind": "chat",
        "model_id": req.model_id,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "response_shape": req.response_shape,
        "messages": req.messages.iter().map(|m| json!({
            "role": m.role,
            "content": collapse_whitespace(&m.content),
        })).collect::<Vec<_>>(),
    })
}

pub(crate) fn normalize_embed(model_id: &str, texts: &[String]) -> Value {
    json!({
        "kind": "embed",
        "model_id": model_id,
        "texts": texts.iter().map(|t| collapse_whitespace(t)).collect::<Vec<_>>(),
    })
}

/// SHA-256 hex digest of the canonical serialization.
pub fn fingerprint(normalized: &Value) -> String {
    let digest = Sha256::digest(normalized.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Cassette {
    pub fn new() -> Self {
        Cassette::default()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        let mut c = Cassette::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Cassette(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Cassette(format!("{} line {}: {e}", path.display(), i + 1)))?;
            c.insert(entry)?;
        }
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    /// Loads existing entries (if any) and appends new ones to the file.
    pub fn open_for_append(path: &Path) -> Result<Self, GatewayError> {
        let mut c = if path.exists() {
            Cassette::load(path)?
        } else {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| GatewayError::Cassette(e.to_string()))?;
            }
            Cassette::new()
        };
        c.sink = Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?,
        );
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    fn insert(&mut self, entry: CassetteEntry) -> Result<bool, GatewayError> {
        if let Some(&i) = self.index.get(&entry.fingerprint) {
            if self.entries[i].request != entry.request {
                return Err(GatewayError::Collision(entry.fingerprint));
            }
            return Ok(false);
        }
        self.index.insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(true)
    }

    /// Adds an entry, writing it through when file-backed. Re-recording an
    /// identical request is a no-op; a different request under the same
    /// fingerprint is a collision.
    pub fn append(&mut self, entry: CassetteEntry) -> Result<(), GatewayError> {
        let line = serde_json::to_string(&entry).expect("entry serializes");
        if self.insert(entry)? {
            if let Some(sink) = self.sink.as_mut() {
                writeln!(sink, "{line}").map_err(|e| GatewayError::Cassette(e.to_string()))?;
                sink.flush().map_err(|e| GatewayError::Cassette(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn get(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        self.index.get(fingerprint).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}
