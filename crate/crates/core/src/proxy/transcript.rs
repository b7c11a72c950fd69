//! Per-session message logs and their JSON Lines form.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::protocol::{Endpoint, EndpointKind, SetCookie};

pub type SessionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub direction: Direction,
    pub endpoint: String,
    /// `None` when bodies are not being logged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cookies: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set_cookies: Vec<SetCookie>,
    /// Response status; only on server-to-client messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
    pub timestamp_ms: u64,
    #[serde(default)]
    pub rewritten: bool,
}

impl Message {
    pub fn kind(&self) -> Option<EndpointKind> {
        self.endpoint.parse::<Endpoint>().ok().map(|e| e.kind())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: SessionId,
    pub client_fingerprint: Option<String>,
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            ..Self::default()
        }
    }

    /// Requests of `kind` paired with the response that followed each.
    pub fn exchanges(&self, kind: EndpointKind) -> impl Iterator<Item = (&Message, Option<&Message>)> + '_ {
        self.messages.iter().enumerate().filter_map(move |(i, m)| {
            if m.direction != Direction::ClientToServer || m.kind() != Some(kind) {
                return None;
            }
            let reply = self.messages[i + 1..]
                .iter()
                .take_while(|r| r.direction == Direction::ServerToClient)
                .find(|r| r.endpoint == m.endpoint);
            Some((m, reply))
        })
    }

    pub fn requests(&self, kind: EndpointKind) -> impl Iterator<Item = &Message> + '_ {
        self.exchanges(kind).map(|(req, _)| req)
    }

    /// Bodies of successful responses to requests of `kind`.
    pub fn ok_responses(&self, kind: EndpointKind) -> impl Iterator<Item = &str> + '_ {
        self.exchanges(kind)
            .filter_map(|(_, r)| r.filter(|r| r.ok == Some(true)).and_then(|r| r.body.as_deref()))
    }
}

/// One line of the JSON Lines export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub session_id: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_fingerprint: Option<String>,
    pub seq: usize,
    #[serde(flatten)]
    pub message: Message,
}

pub fn write_jsonl<W: Write>(transcripts: &[Transcript], mut out: W) -> std::io::Result<()> {
    for t in transcripts {
        for (seq, m) in t.messages.iter().enumerate() {
            let line = TranscriptLine {
                session_id: t.session_id,
                client_fingerprint: t.client_fingerprint.clone(),
                seq,
                message: m.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Inverse of [`write_jsonl`]. Lines are regrouped by session and put back
/// in `seq` order; blank lines are skipped.
pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<Transcript>> {
    type Pending = (Option<String>, Vec<(usize, Message)>);
    let mut sessions: BTreeMap<SessionId, Pending> = BTreeMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: TranscriptLine = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        let entry = sessions.entry(l.session_id).or_default();
        if entry.0.is_none() {
            entry.0 = l.client_fingerprint;
        }
        entry.1.push((l.seq, l.message));
    }
    Ok(sessions
        .into_iter()
        .map(|(session_id, (client_fingerprint, mut msgs))| {
            msgs.sort_by_key(|(seq, _)| *seq);
            Transcript {
                session_id,
                client_fingerprint,
                messages: msgs.into_iter().map(|(_, m)| m).collect(),
            }
        })
        .collect())
}
