//! Stand-in for the election back end: registration, credential lookup,
//! token issuance, partial-vote storage, ballot acceptance and the
//! telephone read-back service.
//!
//! Voter records are keyed by login id. The server keeps only sealed
//! material and public keys: never a PIN, an iVoteID, `kp` or a voter's
//! signing key.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::credential::{seal_credential_file, CredentialSecrets, CHALLENGE_LEN};
use crate::crypto::{
    aead, b64, ChallengeObject, CredentialFile, Credentials, CryptoError, ElectionPublicKey, ElectionSecretKey, Kdf, LoginId, SchemeParams,
    SigningKey, VerifyingKey, VoterKeysId,
};
use crate::protocol::{
    from_body, page, to_body, Ack, Ballot, CastResponse, Endpoint, ErrorKind, Handler, LoginRequest, PartialVote, Preferences, Race,
    ReadbackRequest, Receipt, RegisterRequest, RegisterResponse, Request, Response, TokenFile, TokenRequest,
};

/// Bytes of client nonce appended to the challenge in a token request.
pub const CLIENT_NONCE_LEN: usize = 16;
const ID_DIGEST_DOMAIN: &[u8] = b"ivote-id\0";
const MAX_ID_DRAWS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("iVoteID space exhausted")]
    Capacity,
    #[error("not found")]
    NotFound,
    #[error("authentication failed")]
    Authentication,
    #[error("already voted")]
    AlreadyVoted,
    #[error("verification failed")]
    VerificationFailed,
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ServerError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Validation(_) => ErrorKind::Validation,
            Self::Capacity => ErrorKind::Capacity,
            Self::NotFound => ErrorKind::NotFound,
            Self::Authentication => ErrorKind::Authentication,
            Self::AlreadyVoted => ErrorKind::AlreadyVoted,
            Self::VerificationFailed => ErrorKind::VerificationFailed,
            Self::BadRequest(_) => ErrorKind::BadRequest,
        }
    }

    pub fn to_response(&self) -> Response {
        Response::error(self.kind(), self.to_string())
    }
}

impl From<CryptoError> for ServerError {
    fn from(e: CryptoError) -> Self {
        Self::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionConfig {
    pub races: Vec<Race>,
    pub params: SchemeParams,
}

impl ElectionConfig {
    pub fn new(races: Vec<Race>, params: SchemeParams) -> Result<Self, ServerError> {
        let cfg = Self { races, params };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        self.params.validate()?;
        if self.races.is_empty() {
            return Err(ServerError::Validation("no races".into()));
        }
        let mut ids = BTreeSet::new();
        for race in &self.races {
            if race.candidates.is_empty() {
                return Err(ServerError::Validation(format!("race {:?} has no candidates", race.id)));
            }
            if !ids.insert(&race.id) {
                return Err(ServerError::Validation(format!("duplicate race {:?}", race.id)));
            }
            let unique: BTreeSet<_> = race.candidates.iter().collect();
            if unique.len() != race.candidates.len() {
                return Err(ServerError::Validation(format!("duplicate candidate in {:?}", race.id)));
            }
        }
        Ok(())
    }

    /// A small two-race ballot for demos and tests.
    pub fn sample(params: SchemeParams) -> Self {
        Self {
            races: vec![
                Race::new(
                    "la-sydney",
                    "Legislative Assembly: Sydney",
                    &["ADAMS", "BROWN", "CHEN", "DAVIES", "EVANS"],
                ),
                Race::new("lc-nsw", "Legislative Council", &["GREEN", "HARRIS", "IBRAHIM", "JONES"]),
            ],
            params,
        }
    }
}

impl Default for ElectionConfig {
    fn default() -> Self {
        Self::sample(SchemeParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterRecord {
    pub login_id: LoginId,
    pub credential_file: CredentialFile,
    pub voter_keys_id: VoterKeysId,
    pub verify_pk: VerifyingKey,
    pub partial_votes: Vec<PartialVote>,
    pub final_ballot: Option<Ballot>,
    pub receipt: Option<Receipt>,
}

impl VoterRecord {
    fn challenge(&self) -> Option<&[u8]> {
        self.credential_file.challenge_object.split().ok().map(|(c, _)| c)
    }
}

pub struct Server {
    config: ElectionConfig,
    kdf: Kdf,
    election_key: ElectionSecretKey,
    signing_key: SigningKey,
    voters: BTreeMap<LoginId, VoterRecord>,
    by_keys_id: HashMap<VoterKeysId, LoginId>,
    issued_ids: BTreeSet<String>,
    receipts: BTreeSet<Receipt>,
    rng: ChaCha20Rng,
}

impl Server {
    pub fn new(config: ElectionConfig, seed: u64) -> Result<Self, ServerError> {
        Self::with_rng(config, ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn with_rng(config: ElectionConfig, mut rng: ChaCha20Rng) -> Result<Self, ServerError> {
        config.validate()?;
        let kdf = Kdf::new(config.params.iterations)?;
        let election_key = ElectionSecretKey::generate(&mut rng);
        let signing_key = SigningKey::generate(&mut rng);
        Ok(Self {
            config,
            kdf,
            election_key,
            signing_key,
            voters: BTreeMap::new(),
            by_keys_id: HashMap::new(),
            issued_ids: BTreeSet::new(),
            receipts: BTreeSet::new(),
            rng,
        })
    }

    pub fn config(&self) -> &ElectionConfig {
        &self.config
    }

    pub fn kdf(&self) -> &Kdf {
        &self.kdf
    }

    /// The key clients check challenge signatures against.
    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing_key.verifying_key()
    }

    pub fn election_public_key(&self) -> ElectionPublicKey {
        self.election_key.public_key()
    }

    pub fn voter_count(&self) -> usize {
        self.voters.len()
    }

    pub fn record(&self, login_id: &LoginId) -> Option<&VoterRecord> {
        self.voters.get(login_id)
    }

    pub fn record_by_keys_id(&self, id: &VoterKeysId) -> Option<&VoterRecord> {
        self.by_keys_id.get(id).and_then(|l| self.voters.get(l))
    }

    pub fn records(&self) -> impl Iterator<Item = &VoterRecord> {
        self.voters.values()
    }

    fn id_digest(ivote_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(ID_DIGEST_DOMAIN);
        h.update(ivote_id.as_bytes());
        hex::encode(h.finalize())
    }

    fn id_space(&self) -> u128 {
        10u128.pow(self.config.params.id_digits as u32)
    }

    fn fresh_ivote_id(&mut self) -> Result<String, ServerError> {
        let space = self.id_space();
        if self.issued_ids.len() as u128 >= space {
            return Err(ServerError::Capacity);
        }
        let width = self.config.params.id_digits;
        for _ in 0..MAX_ID_DRAWS {
            let id = format!("{:0width$}", self.rng.gen_range(0..space));
            if self.issued_ids.insert(Self::id_digest(&id)) {
                return Ok(id);
            }
        }
        Err(ServerError::Capacity)
    }

    /// Enrols a voter and returns the iVoteID, which the caller is expected
    /// to deliver out of band. `identity` is not checked or stored.
    pub fn register(&mut self, identity: &str, pin: &str) -> Result<String, ServerError> {
        let _ = identity;
        let p = &self.config.params;
        crate::crypto::creds::check_digits("PIN", pin, p.pin_digits)?;
        let ivote_id = self.fresh_ivote_id()?;
        let creds = Credentials::with_params(&ivote_id, pin, &self.config.params)?;
        let login_id = self.kdf.login_id(&creds);
        let file = self.make_credential_file(&creds)?;
        let voter_keys_id = file.voter_keys_id()?;
        let record = VoterRecord {
            login_id: login_id.clone(),
            verify_pk: file.vad.voter_certificate.public_key,
            credential_file: file,
            voter_keys_id: voter_keys_id.clone(),
            partial_votes: Vec::new(),
            final_ballot: None,
            receipt: None,
        };
        self.by_keys_id.insert(voter_keys_id, login_id.clone());
        self.voters.insert(login_id, record);
        Ok(ivote_id)
    }

    /// Builds a fresh credential file for `creds`: new kp, signing key,
    /// voterKeysId, challenge, salts and nonces. Nothing is retained here.
    pub fn make_credential_file(&mut self, creds: &Credentials) -> Result<CredentialFile, ServerError> {
        let mut kp = [0u8; aead::KEY_LEN];
        self.rng.fill_bytes(&mut kp);
        let sk = SigningKey::generate(&mut self.rng);
        let mut voter_keys_id = VoterKeysId::random(&mut self.rng);
        while self.by_keys_id.contains_key(&voter_keys_id) {
            voter_keys_id = VoterKeysId::random(&mut self.rng);
        }
        let mut challenge = [0u8; CHALLENGE_LEN];
        self.rng.fill_bytes(&mut challenge);
        let challenge_object = ChallengeObject::new(&challenge, &self.signing_key.sign(&challenge));
        let secrets = CredentialSecrets {
            kp,
            sk,
            voter_keys_id,
            challenge_object,
        };
        Ok(seal_credential_file(&self.kdf, creds, &secrets, &mut self.rng)?)
    }

    pub fn lookup_credential(&self, login_id: &LoginId) -> Result<&CredentialFile, ServerError> {
        self.voters.get(login_id).map(|r| &r.credential_file).ok_or(ServerError::NotFound)
    }

    fn voter(&self, id: &VoterKeysId) -> Result<&VoterRecord, ServerError> {
        self.record_by_keys_id(id).ok_or(ServerError::NotFound)
    }

    fn voter_mut(&mut self, id: &VoterKeysId) -> Result<&mut VoterRecord, ServerError> {
        let login_id = self.by_keys_id.get(id).ok_or(ServerError::NotFound)?;
        self.voters.get_mut(login_id).ok_or(ServerError::NotFound)
    }

    pub fn issue_token(&self, id: &VoterKeysId, req: &TokenRequest) -> Result<TokenFile, ServerError> {
        let record = self.voter(id)?;
        if !record.verify_pk.verify(&req.response, &req.signature) {
            return Err(ServerError::Authentication);
        }
        let expected = record.challenge().ok_or(ServerError::Authentication)?;
        if req.response.len() != CHALLENGE_LEN + CLIENT_NONCE_LEN || req.challenge() != Some(expected) {
            return Err(ServerError::Authentication);
        }
        Ok(TokenFile {
            election_public_key: self.election_public_key(),
            races: self.config.races.clone(),
            partial_votes: record.partial_votes.clone(),
        })
    }

    /// Appends a partial vote. The blob is never opened.
    pub fn store_partial_vote(&mut self, id: &VoterKeysId, pv: PartialVote) -> Result<Ack, ServerError> {
        let record = self.voter_mut(id)?;
        if record.final_ballot.is_some() {
            return Err(ServerError::AlreadyVoted);
        }
        if !record.verify_pk.verify(&PartialVote::signed_message(&pv.eo), &pv.signature) {
            return Err(ServerError::Authentication);
        }
        record.partial_votes.push(pv);
        Ok(Ack {
            stored: record.partial_votes.len(),
        })
    }

    pub fn cast_ballot(&mut self, id: &VoterKeysId, ballot: Ballot) -> Result<Receipt, ServerError> {
        let record = self.voter(id)?;
        if record.final_ballot.is_some() {
            return Err(ServerError::AlreadyVoted);
        }
        let msg = Ballot::signed_message(&ballot.wrapped_key, &ballot.sealed_prefs);
        if !record.verify_pk.verify(&msg, &ballot.signature) {
            return Err(ServerError::Authentication);
        }
        let receipt = loop {
            let r = Receipt::random(&mut self.rng);
            if self.receipts.insert(r.clone()) {
                break r;
            }
        };
        let record = self.voter_mut(id)?;
        record.final_ballot = Some(ballot);
        record.receipt = Some(receipt.clone());
        Ok(receipt)
    }

    /// Every mismatch, whatever the cause, is `VerificationFailed`.
    pub fn verify_readback(&self, ivote_id: &str, pin: &str, receipt: &str) -> Result<Preferences, ServerError> {
        let fail = |_| ServerError::VerificationFailed;
        let creds = Credentials::with_params(ivote_id, pin, &self.config.params).map_err(fail)?;
        let record = self.voters.get(&self.kdf.login_id(&creds)).ok_or(ServerError::VerificationFailed)?;
        let (Some(stored), Some(ballot)) = (&record.receipt, &record.final_ballot) else {
            return Err(ServerError::VerificationFailed);
        };
        if stored.as_str() != receipt {
            return Err(ServerError::VerificationFailed);
        }
        decrypt_ballot(&self.election_key, ballot).map_err(|_| ServerError::VerificationFailed)
    }

    /// Decrypts any ballot with the election key; the tally side's view.
    pub fn open_ballot(&self, ballot: &Ballot) -> Result<Preferences, ServerError> {
        decrypt_ballot(&self.election_key, ballot)
    }

    pub fn handle(&mut self, req: &Request) -> Result<Response, ServerError> {
        let endpoint: Endpoint = req.parsed_endpoint().map_err(|e| ServerError::BadRequest(e.to_string()))?;
        if let (Some(path_id), Some(env_id)) = (endpoint.voter_keys_id(), &req.voter_keys_id) {
            if path_id != env_id {
                return Err(ServerError::BadRequest("voter_keys_id does not match path".into()));
            }
        }
        let bad = |e: crate::protocol::ProtocolError| ServerError::BadRequest(e.to_string());
        let body = match &endpoint {
            Endpoint::Register => {
                return Err(ServerError::BadRequest("registration needs a delivery channel".into()));
            }
            Endpoint::LoginPage => page::login_page(),
            Endpoint::Login => {
                let login: LoginRequest = from_body(&req.body).map_err(bad)?;
                self.lookup_credential(&login.voter_id)?.to_json()
            }
            Endpoint::Token { voter_keys_id, .. } => to_body(&self.issue_token(voter_keys_id, &from_body(&req.body).map_err(bad)?)?),
            Endpoint::PartialVote { voter_keys_id, .. } => {
                to_body(&self.store_partial_vote(voter_keys_id, from_body(&req.body).map_err(bad)?)?)
            }
            Endpoint::Vote { voter_keys_id, .. } => to_body(&CastResponse {
                receipt: self.cast_ballot(voter_keys_id, from_body(&req.body).map_err(bad)?)?,
            }),
            Endpoint::Readback => {
                let rb: ReadbackRequest = from_body(&req.body).map_err(bad)?;
                String::from_utf8(self.verify_readback(&rb.ivote_id, &rb.pin, &rb.receipt)?.to_canonical_json())
                    .expect("canonical json is utf-8")
            }
        };
        Ok(Response::ok(body))
    }

    /// Serialized state. The RNG is reseeded from its own output so a
    /// restored server continues exactly like the original.
    pub fn snapshot(&mut self) -> Snapshot {
        let mut seed = [0u8; 32];
        self.rng.fill_bytes(&mut seed);
        self.rng = ChaCha20Rng::from_seed(seed);
        Snapshot {
            config: self.config.clone(),
            election_key: self.election_key.clone(),
            signing_key: self.signing_key.to_bytes(),
            voters: self.voters.values().cloned().collect(),
            issued_ids: self.issued_ids.iter().cloned().collect(),
            rng_seed: seed,
        }
    }

    pub fn restore(snapshot: Snapshot) -> Result<Self, ServerError> {
        snapshot.config.validate()?;
        let kdf = Kdf::new(snapshot.config.params.iterations)?;
        let mut by_keys_id = HashMap::new();
        let mut voters = BTreeMap::new();
        let mut receipts = BTreeSet::new();
        for r in snapshot.voters {
            if let Some(rc) = &r.receipt {
                receipts.insert(rc.clone());
            }
            by_keys_id.insert(r.voter_keys_id.clone(), r.login_id.clone());
            voters.insert(r.login_id.clone(), r);
        }
        Ok(Self {
            config: snapshot.config,
            kdf,
            election_key: snapshot.election_key,
            signing_key: SigningKey::from_bytes(&snapshot.signing_key)?,
            voters,
            by_keys_id,
            issued_ids: snapshot.issued_ids.into_iter().collect(),
            receipts,
            rng: ChaCha20Rng::from_seed(snapshot.rng_seed),
        })
    }

    pub fn save(&mut self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(&self.snapshot()).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let snapshot: Snapshot =
            serde_json::from_slice(&std::fs::read(path)?).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Self::restore(snapshot).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Opens a ballot with the election key: unwrap the per-ballot key, then
/// unseal the preferences.
pub fn decrypt_ballot(key: &ElectionSecretKey, ballot: &Ballot) -> Result<Preferences, ServerError> {
    let k = key.unwrap_key(&ballot.wrapped_key).map_err(|_| ServerError::VerificationFailed)?;
    let plain = aead::unseal(&k, &ballot.sealed_prefs).map_err(|_| ServerError::VerificationFailed)?;
    Preferences::from_json(&plain).map_err(|_| ServerError::VerificationFailed)
}

#[derive(Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: ElectionConfig,
    pub election_key: ElectionSecretKey,
    #[serde(with = "b64::array")]
    pub signing_key: [u8; 32],
    pub voters: Vec<VoterRecord>,
    pub issued_ids: Vec<String>,
    #[serde(with = "b64::array")]
    pub rng_seed: [u8; 32],
}

/// Where registration drops iVoteIDs for the voter to pick up, standing in
/// for SMS or post. Not part of the server's state.
#[derive(Debug, Clone, Default)]
pub struct DeliveryChannel(Arc<Mutex<HashMap<String, VecDeque<String>>>>);

impl DeliveryChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deliver(&self, identity: &str, ivote_id: String) {
        self.0.lock().unwrap().entry(identity.to_owned()).or_default().push_back(ivote_id);
    }

    /// Oldest undelivered iVoteID for `identity`.
    pub fn collect(&self, identity: &str) -> Option<String> {
        self.0.lock().unwrap().get_mut(identity)?.pop_front()
    }
}

/// A server behind a lock plus its delivery channel; this is what
/// transports talk to.
#[derive(Clone)]
pub struct SharedServer {
    inner: Arc<Mutex<Server>>,
    delivery: DeliveryChannel,
}

impl SharedServer {
    pub fn new(server: Server) -> Self {
        Self {
            inner: Arc::new(Mutex::new(server)),
            delivery: DeliveryChannel::new(),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, Server> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn delivery(&self) -> &DeliveryChannel {
        &self.delivery
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.lock().verifying_key()
    }

    pub fn params(&self) -> SchemeParams {
        self.lock().config().params
    }

    fn register(&self, req: &Request) -> Result<Response, ServerError> {
        let r: RegisterRequest = from_body(&req.body).map_err(|e| ServerError::BadRequest(e.to_string()))?;
        let ivote_id = self.lock().register(&r.identity, &r.pin)?;
        self.delivery.deliver(&r.identity, ivote_id);
        Ok(Response::ok(to_body(&RegisterResponse { accepted: true })))
    }
}

impl Handler for SharedServer {
    fn handle(&self, req: Request) -> Response {
        let result = match req.parsed_endpoint() {
            Ok(Endpoint::Register) => self.register(&req),
            _ => self.lock().handle(&req),
        };
        result.unwrap_or_else(|e| e.to_response())
    }
}
