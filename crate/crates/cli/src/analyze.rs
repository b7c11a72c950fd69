//! Offline analysis of saved proxy transcripts.

use std::collections::{BTreeMap, BTreeSet};

use ivote_core::bruteforce::{CrackError, CrackOptions, Progress};
use ivote_core::crypto::{Credentials, LoginId, SchemeParams};
use ivote_core::proxy::{
    crack_session_with, decrypt_partials, harvest_credentials, link_sessions, observed_login_ids, ProxyError, SessionId, Transcript,
    DEFAULT_COOKIE_LIFETIME_SECS,
};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Harvest,
    Crack,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub session_id: SessionId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_fingerprint: Option<String>,
    pub messages: usize,
    pub bodies: usize,
    pub login_ids: Vec<LoginId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credentials: Option<Credentials>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crack_error: Option<String>,
    /// Partial votes opened with the recovered credentials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partials_failed: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub sessions: usize,
    pub messages: usize,
    pub login_ids: usize,
    pub harvested: usize,
    pub cracked: usize,
    pub partials: usize,
    /// Identity to the session that cast its vote.
    pub linked: BTreeMap<String, SessionId>,
    pub details: Vec<SessionSummary>,
}

pub struct CrackPlan<'a> {
    pub known_id: Option<&'a str>,
    pub opts: CrackOptions,
}

pub fn analyze(
    transcripts: &[Transcript],
    params: &SchemeParams,
    crack: Option<&CrackPlan<'_>>,
    progress: &mut dyn FnMut(SessionId, &Progress),
) -> Result<AnalysisReport, ProxyError> {
    let mut details = Vec::with_capacity(transcripts.len());
    for t in transcripts {
        let login_ids = observed_login_ids(t);
        let harvested = harvest_credentials(t, params, DEFAULT_COOKIE_LIFETIME_SECS);
        let mut s = SessionSummary {
            session_id: t.session_id,
            client_fingerprint: t.client_fingerprint.clone(),
            messages: t.messages.len(),
            bodies: t.messages.iter().filter(|m| m.body.is_some()).count(),
            login_ids: login_ids.clone(),
            credentials: None,
            source: None,
            crack_error: None,
            partials: None,
            partials_failed: None,
        };
        if let Some(h) = harvested.first() {
            s.credentials = Some(h.creds.clone());
            s.source = Some(Source::Harvest);
        } else if let (Some(plan), false) = (crack, login_ids.is_empty()) {
            let sid = t.session_id;
            match crack_session_with(t, params, plan.known_id, &plan.opts, &mut |p| progress(sid, p)) {
                Ok(c) => {
                    s.credentials = Some(c);
                    s.source = Some(Source::Crack);
                }
                Err(ProxyError::Crack(e @ (CrackError::TimedOut { .. } | CrackError::NotFound { .. }))) => {
                    s.crack_error = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(c) = &s.credentials {
            if let Ok(r) = decrypt_partials(t, params, c) {
                s.partials = Some(r.recovered.len());
                s.partials_failed = Some(r.failed.len());
            }
        }
        details.push(s);
    }
    let distinct: BTreeSet<&LoginId> = details.iter().flat_map(|s| &s.login_ids).collect();
    let count = |src: fn(&Source) -> bool| details.iter().filter(|s| s.source.as_ref().is_some_and(src)).count();
    Ok(AnalysisReport {
        sessions: transcripts.len(),
        messages: details.iter().map(|s| s.messages).sum(),
        login_ids: distinct.len(),
        harvested: count(|s| matches!(s, Source::Harvest)),
        cracked: count(|s| matches!(s, Source::Crack)),
        partials: details.iter().filter_map(|s| s.partials).sum(),
        linked: link_sessions(transcripts),
        details,
    })
}
