//! The voter's browser: login page, credential-file opening, challenge
//! response, partial saves, resume and cast.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::clock::SimClock;
use crate::crypto::{aead, open_credential_file, CredentialFile, Credentials, CryptoError, Kdf, KeyMaterial, SchemeParams, VerifyingKey};
use crate::protocol::page::{self, ScriptEffect};
use crate::protocol::{
    from_body, to_body, Ack, Ballot, CastResponse, Endpoint, ErrorKind, LoginRequest, PartialVote, PreferenceVector, Preferences,
    ReadbackRequest, Receipt, RegisterRequest, RegisterResponse, Request, Response, TokenFile, TokenRequest, Transport, TransportError,
};
use crate::server::CLIENT_NONCE_LEN;

pub const DEFAULT_THINK_MS: u64 = 2_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("login failed")]
    LoginFailed,
    #[error("server authentication failed")]
    ServerAuth,
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("server rejected request ({kind:?}): {message}")]
    Server { kind: ErrorKind, message: String },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("stored partial vote does not decrypt")]
    CorruptPartial,
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Worth retrying unchanged.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport(_))
    }

    pub fn server_kind(&self) -> Option<ErrorKind> {
        match self {
            Self::Server { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

/// What a voter's client knows before contacting anyone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientConfig {
    pub server_key: VerifyingKey,
    pub params: SchemeParams,
}

impl ClientConfig {
    pub fn kdf(&self) -> Kdf {
        Kdf::new(self.params.iterations).expect("params validated by caller")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Cookie {
    value: String,
    expires_at_ms: Option<u64>,
}

/// One voter's browser. Holds cookies across connections, so the same
/// browser carries the same fingerprint cookie through registration and
/// voting.
pub struct Browser {
    device: String,
    clock: SimClock,
    rng: ChaCha20Rng,
    jar: BTreeMap<String, Cookie>,
    hooks: Vec<ScriptEffect>,
    fields: BTreeMap<String, String>,
    think_ms: u64,
}

impl Browser {
    pub fn new(clock: SimClock, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut dev = [0u8; 8];
        rng.fill_bytes(&mut dev);
        Self {
            device: hex::encode(dev),
            clock,
            rng,
            jar: BTreeMap::new(),
            hooks: Vec::new(),
            fields: BTreeMap::new(),
            think_ms: DEFAULT_THINK_MS,
        }
    }

    /// Simulated time the voter spends on each form field.
    pub fn with_think_time(mut self, ms: u64) -> Self {
        self.think_ms = ms;
        self
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    fn live(&self, c: &Cookie) -> bool {
        c.expires_at_ms.map_or(true, |t| self.clock.now_ms() < t)
    }

    pub fn cookie(&self, name: &str) -> Option<&str> {
        self.jar.get(name).filter(|c| self.live(c)).map(|c| c.value.as_str())
    }

    fn set_cookie(&mut self, name: &str, value: String, max_age_secs: Option<u64>) {
        let expires_at_ms = max_age_secs.map(|s| self.clock.now_ms() + s * 1000);
        self.jar.insert(name.to_owned(), Cookie { value, expires_at_ms });
    }

    /// Sends with every live cookie attached, then applies `set_cookies`.
    pub fn send(&mut self, transport: &mut dyn Transport, mut req: Request) -> Result<Response, ClientError> {
        self.jar.retain(|_, c| c.expires_at_ms.map_or(true, |t| self.clock.now_ms() < t));
        req.cookies = self.jar.iter().map(|(k, c)| (k.clone(), c.value.clone())).collect();
        let resp = transport.exchange(req)?;
        for sc in &resp.set_cookies {
            self.set_cookie(&sc.name, sc.value.clone(), sc.max_age_secs);
        }
        if let Some(err) = resp.error_body() {
            return Err(ClientError::Server {
                kind: err.error,
                message: err.message,
            });
        }
        if !resp.is_ok() {
            return Err(ClientError::Protocol("error response without error body".into()));
        }
        Ok(resp)
    }

    /// Loads a page and runs the statements of its script this browser
    /// understands.
    fn load_page(&mut self, html: &str) {
        self.fields.clear();
        self.hooks.clear();
        let Some(script) = page::script_of(html) else { return };
        for effect in page::effects(script) {
            match &effect {
                ScriptEffect::SetProfileCookie { name, ttl_secs } => {
                    let value = format!("d={}&t={}&ttl={}", self.device, self.clock.now_ms(), ttl_secs);
                    self.set_cookie(name, value, Some(*ttl_secs));
                }
                ScriptEffect::Leak { .. } => self.hooks.push(effect),
            }
        }
    }

    /// Types into a form field, firing any change listeners on it. A
    /// listener writes into its cookie only while that cookie is alive.
    pub fn type_into(&mut self, field: &str, value: &str) {
        self.clock.advance_ms(self.think_ms);
        self.fields.insert(field.to_owned(), value.to_owned());
        let hooks: Vec<_> = self.hooks.clone();
        for hook in hooks {
            let ScriptEffect::Leak { field: f, cookie, key } = hook else {
                continue;
            };
            if f != field {
                continue;
            }
            let Some(current) = self.jar.get(&cookie).filter(|c| self.live(c)).cloned() else {
                continue;
            };
            let value = set_query_field(&current.value, &key, value);
            self.jar.insert(cookie, Cookie { value, ..current });
        }
    }

    pub fn open_login_page(&mut self, transport: &mut dyn Transport) -> Result<String, ClientError> {
        let html = self.send(transport, Request::new(&Endpoint::LoginPage, String::new()))?.body;
        if !page::has_field(&html, page::ID_FIELD) || !page::has_field(&html, page::PIN_FIELD) {
            return Err(ClientError::Protocol("login page lacks credential fields".into()));
        }
        self.load_page(&html);
        Ok(html)
    }

    pub fn register(&mut self, transport: &mut dyn Transport, identity: &str, pin: &str) -> Result<(), ClientError> {
        let body = to_body(&RegisterRequest {
            identity: identity.to_owned(),
            pin: pin.to_owned(),
        });
        let resp = self.send(transport, Request::new(&Endpoint::Register, body))?;
        let ack: RegisterResponse = from_body(&resp.body).map_err(|e| ClientError::Protocol(e.to_string()))?;
        if !ack.accepted {
            return Err(ClientError::Protocol("registration not accepted".into()));
        }
        Ok(())
    }

    /// The whole login sequence: page, form entry, credential file,
    /// challenge response, token.
    pub fn login(&mut self, transport: &mut dyn Transport, cfg: &ClientConfig, creds: &Credentials) -> Result<Session, ClientError> {
        self.open_login_page(transport)?;
        self.type_into(page::ID_FIELD, creds.ivote_id());
        self.type_into(page::PIN_FIELD, creds.pin());
        self.clock.advance_ms(self.think_ms);

        let kdf = cfg.kdf();
        let voter_id = kdf.login_id(creds);
        let resp = self.send(transport, Request::new(&Endpoint::Login, to_body(&LoginRequest { voter_id })));
        let file = match resp {
            Ok(r) => CredentialFile::from_json(&r.body).map_err(|_| ClientError::LoginFailed)?,
            Err(ClientError::Server {
                kind: ErrorKind::NotFound, ..
            }) => return Err(ClientError::LoginFailed),
            Err(e) => return Err(e),
        };
        let keys = open_credential_file(&kdf, creds, &file).map_err(|_| ClientError::LoginFailed)?;
        let challenge = file.challenge_object.verify(&cfg.server_key).map_err(|_| ClientError::ServerAuth)?;

        let mut response = challenge.to_vec();
        let mut nonce = [0u8; CLIENT_NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        response.extend_from_slice(&nonce);
        let signature = keys.sk.sign(&response);
        let req = Request::new(
            &Endpoint::token(&keys.voter_keys_id),
            to_body(&TokenRequest { response, signature }),
        );
        let token: TokenFile = match self.send(transport, req) {
            Ok(r) => from_body(&r.body).map_err(|e| ClientError::Protocol(e.to_string()))?,
            Err(ClientError::Server { .. }) => return Err(ClientError::LoginFailed),
            Err(e) => return Err(e),
        };

        Ok(Session {
            creds: creds.clone(),
            keys,
            token,
            entered: Preferences::new(),
            receipt: None,
            rng: ChaCha20Rng::seed_from_u64(self.rng.gen()),
        })
    }
}

fn set_query_field(query: &str, key: &str, value: &str) -> String {
    let mut parts: Vec<String> = query
        .split('&')
        .filter(|p| !p.is_empty() && p.split('=').next() != Some(key))
        .map(str::to_owned)
        .collect();
    parts.push(format!("{key}={value}"));
    parts.join("&")
}

/// A logged-in voter.
pub struct Session {
    creds: Credentials,
    keys: KeyMaterial,
    token: TokenFile,
    entered: Preferences,
    receipt: Option<Receipt>,
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("voter_keys_id", &self.keys.voter_keys_id)
            .field("partial_votes", &self.token.partial_votes.len())
            .field("receipt", &self.receipt)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn creds(&self) -> &Credentials {
        &self.creds
    }

    pub fn key_material(&self) -> &KeyMaterial {
        &self.keys
    }

    pub fn token(&self) -> &TokenFile {
        &self.token
    }

    /// Preferences entered so far on this session's screens.
    pub fn entered(&self) -> &Preferences {
        &self.entered
    }

    pub fn receipt(&self) -> Option<&Receipt> {
        self.receipt.as_ref()
    }

    fn check(&self, prefs: &Preferences) -> Result<(), ClientError> {
        prefs
            .validate(&self.token.races)
            .map_err(|e| ClientError::Validation(e.to_string()))
    }

    /// Records `pv` on screen and posts every entered preference as a
    /// sealed, signed partial vote. Local state changes only once the
    /// server has acknowledged.
    pub fn save_partial(&mut self, browser: &mut Browser, transport: &mut dyn Transport, pv: PreferenceVector) -> Result<Ack, ClientError> {
        pv.validate(&self.token.races).map_err(|e| ClientError::Validation(e.to_string()))?;
        let mut next = self.entered.clone();
        next.insert(pv);
        self.save_all(browser, transport, next)
    }

    /// Like [`Session::save_partial`] but replaces the whole entered state.
    pub fn save_all(&mut self, browser: &mut Browser, transport: &mut dyn Transport, prefs: Preferences) -> Result<Ack, ClientError> {
        self.check(&prefs)?;
        let eo = aead::seal_random(&self.keys.kp, &mut self.rng, &prefs.to_canonical_json())
            .map_err(|e| ClientError::Validation(e.to_string()))?;
        let signature = self.keys.sk.sign(&PartialVote::signed_message(&eo));
        let partial = PartialVote { eo, signature };
        let req = Request::new(&Endpoint::partial_vote(&self.keys.voter_keys_id), to_body(&partial));
        let resp = browser.send(transport, req)?;
        let ack: Ack = from_body(&resp.body).map_err(|e| ClientError::Protocol(e.to_string()))?;
        self.token.partial_votes.push(partial);
        self.entered = prefs;
        Ok(ack)
    }

    /// Restores the screens from the most recent partial vote.
    pub fn resume(&mut self) -> Result<Option<Preferences>, ClientError> {
        let Some(last) = self.token.partial_votes.last() else {
            return Ok(None);
        };
        let plain = aead::unseal(&self.keys.kp, &last.eo).map_err(|_| ClientError::CorruptPartial)?;
        let prefs = Preferences::from_json(&plain).map_err(|_| ClientError::CorruptPartial)?;
        self.entered = prefs.clone();
        Ok(Some(prefs))
    }

    pub fn cast(&mut self, browser: &mut Browser, transport: &mut dyn Transport, prefs: &Preferences) -> Result<Receipt, ClientError> {
        self.check(prefs)?;
        let ballot = build_ballot(&self.keys, &self.token, prefs, &mut self.rng)?;
        let req = Request::new(&Endpoint::vote(&self.keys.voter_keys_id), to_body(&ballot));
        let resp = browser.send(transport, req)?;
        let cast: CastResponse = from_body(&resp.body).map_err(|e| ClientError::Protocol(e.to_string()))?;
        self.receipt = Some(cast.receipt.clone());
        Ok(cast.receipt)
    }
}

/// Fresh ballot key, preferences sealed under it, key wrapped to the
/// election, the pair signed with the voter's key.
pub fn build_ballot<R: RngCore + rand::CryptoRng>(
    keys: &KeyMaterial,
    token: &TokenFile,
    prefs: &Preferences,
    rng: &mut R,
) -> Result<Ballot, ClientError> {
    let mut k = [0u8; aead::KEY_LEN];
    rng.fill_bytes(&mut k);
    let bad = |e: CryptoError| ClientError::Validation(e.to_string());
    let sealed_prefs = aead::seal_random(&k, rng, &prefs.to_canonical_json()).map_err(bad)?;
    let wrapped_key = token.election_public_key.wrap_key(&k, rng).map_err(bad)?;
    let signature = keys.sk.sign(&Ballot::signed_message(&wrapped_key, &sealed_prefs));
    Ok(Ballot {
        wrapped_key,
        sealed_prefs,
        signature,
    })
}

/// The telephone verification call.
pub fn verify_by_phone(transport: &mut dyn Transport, creds: &Credentials, receipt: &Receipt) -> Result<Preferences, ClientError> {
    let body = to_body(&ReadbackRequest {
        ivote_id: creds.ivote_id().to_owned(),
        pin: creds.pin().to_owned(),
        receipt: receipt.to_string(),
    });
    let resp = transport.exchange(Request::new(&Endpoint::Readback, body))?;
    if let Some(err) = resp.error_body() {
        return Err(ClientError::Server {
            kind: err.error,
            message: err.message,
        });
    }
    Preferences::from_json(resp.body.as_bytes()).map_err(|e| ClientError::Protocol(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Local;
    use crate::server::{ElectionConfig, Server, SharedServer};

    fn setup() -> (SharedServer, ClientConfig, SimClock) {
        let params = SchemeParams {
            iterations: 16,
            ..SchemeParams::default()
        };
        let server = SharedServer::new(Server::new(ElectionConfig::sample(params), 3).unwrap());
        let cfg = ClientConfig {
            server_key: server.verifying_key(),
            params,
        };
        (server, cfg, SimClock::new())
    }

    fn enrol(server: &SharedServer, b: &mut Browser, who: &str, pin: &str) -> Credentials {
        b.register(&mut Local(server.clone()), who, pin).unwrap();
        let id = server.delivery().collect(who).unwrap();
        Credentials::with_params(&id, pin, &server.params()).unwrap()
    }

    fn la(ranking: &[&str]) -> PreferenceVector {
        PreferenceVector::new("la-sydney", ranking)
    }

    #[test]
    fn login_save_resume_cast() {
        let (server, cfg, clock) = setup();
        let mut t = Local(server.clone());
        let mut b = Browser::new(clock, 1);
        let creds = enrol(&server, &mut b, "alice", "123456");

        let mut s = b.login(&mut t, &cfg, &creds).unwrap();
        assert!(s.token().partial_votes.is_empty());
        assert_eq!(s.resume().unwrap(), None);
        s.save_partial(&mut b, &mut t, la(&["ADAMS"])).unwrap();
        s.save_partial(&mut b, &mut t, la(&["BROWN", "ADAMS"])).unwrap();
        assert_eq!(
            s.save_partial(&mut b, &mut t, la(&["NOBODY"])).unwrap_err(),
            ClientError::Validation("invalid preferences: \"NOBODY\" is not a candidate in \"la-sydney\"".into())
        );

        let mut fresh = b.login(&mut t, &cfg, &creds).unwrap();
        let resumed = fresh.resume().unwrap().unwrap();
        assert_eq!(resumed.get("la-sydney").unwrap(), ["BROWN", "ADAMS"]);
        assert_eq!(fresh.token().partial_votes.len(), 2);

        let receipt = fresh.cast(&mut b, &mut t, &resumed).unwrap();
        assert_eq!(receipt.as_str().len(), 12);
        assert_eq!(
            fresh.cast(&mut b, &mut t, &resumed).unwrap_err().server_kind(),
            Some(ErrorKind::AlreadyVoted)
        );
        assert_eq!(verify_by_phone(&mut t, &creds, &receipt).unwrap(), resumed);

        let guard = server.lock();
        let ballot = guard.records().next().unwrap().final_ballot.clone().unwrap();
        assert_eq!(guard.open_ballot(&ballot).unwrap(), resumed);
    }

    #[test]
    fn unregistered_creds_fail_login() {
        let (server, cfg, clock) = setup();
        let mut b = Browser::new(clock, 1);
        let creds = Credentials::with_params("12345678", "000000", &cfg.params).unwrap();
        assert_eq!(b.login(&mut Local(server), &cfg, &creds).unwrap_err(), ClientError::LoginFailed);
    }

    #[test]
    fn wrong_server_key_aborts_before_signing() {
        let (server, mut cfg, clock) = setup();
        let mut b = Browser::new(clock, 1);
        let creds = enrol(&server, &mut b, "bob", "654321");
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        cfg.server_key = crate::crypto::SigningKey::generate(&mut rng).verifying_key();

        struct Spy<T>(T, Vec<String>);
        impl<T: Transport> Transport for Spy<T> {
            fn exchange(&mut self, r: Request) -> Result<Response, TransportError> {
                self.1.push(r.endpoint.clone());
                self.0.exchange(r)
            }
        }
        let mut spy = Spy(Local(server), Vec::new());
        assert_eq!(b.login(&mut spy, &cfg, &creds).unwrap_err(), ClientError::ServerAuth);
        assert!(spy.1.iter().all(|e| !e.starts_with("vote-encoder/token")));
    }

    #[test]
    fn transport_failure_is_retriable_and_changes_nothing() {
        let (server, cfg, clock) = setup();
        let mut t = Local(server.clone());
        let mut b = Browser::new(clock, 1);
        let creds = enrol(&server, &mut b, "carol", "111111");
        let mut s = b.login(&mut t, &cfg, &creds).unwrap();
        let err = s
            .save_partial(&mut b, &mut crate::protocol::Unreachable, la(&["CHEN"]))
            .unwrap_err();
        assert!(err.is_retriable());
        assert!(s.entered().is_empty());
        assert!(s.token().partial_votes.is_empty());
        assert!(server.lock().records().all(|r| r.partial_votes.is_empty()));
    }

    #[test]
    fn profile_cookie_expires_and_listeners_need_it_alive() {
        let clock = SimClock::new();
        let mut b = Browser::new(clock.clone(), 9).with_think_time(1_000);
        let script = r#"setCookie("__utmvc",fingerprint(),20);onchange("PIN",leak("__utmvc","pin"))"#;
        b.load_page(&format!("<script>{script}</script>"));
        b.type_into("PIN", "123456");
        assert!(b.cookie("__utmvc").unwrap().ends_with("&pin=123456"));
        clock.advance_secs(30);
        assert_eq!(b.cookie("__utmvc"), None);
        b.type_into("PIN", "999999");
        assert_eq!(b.cookie("__utmvc"), None);
    }

    #[test]
    fn query_field_replacement() {
        assert_eq!(set_query_field("d=1&t=2", "id", "x"), "d=1&t=2&id=x");
        assert_eq!(set_query_field("d=1&id=a&t=2", "id", "x"), "d=1&t=2&id=x");
    }
}
