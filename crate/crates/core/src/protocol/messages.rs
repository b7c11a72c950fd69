//! JSON bodies exchanged between browser and server.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::credential::CHALLENGE_LEN;
use crate::crypto::{b64, ElectionPublicKey, LoginId, SealedBlob, Signature, WrappedKey};

use super::ProtocolError;

pub const RECEIPT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Race {
    pub id: String,
    pub name: String,
    pub candidates: Vec<String>,
}

impl Race {
    pub fn new(id: &str, name: &str, candidates: &[&str]) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            candidates: candidates.iter().map(|c| c.to_string()).collect(),
        }
    }
}

/// A ranking for one race.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub race_id: String,
    pub ranking: Vec<String>,
}

impl PreferenceVector {
    pub fn new(race_id: &str, ranking: &[&str]) -> Self {
        Self {
            race_id: race_id.into(),
            ranking: ranking.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn validate(&self, races: &[Race]) -> Result<(), ProtocolError> {
        let race = races
            .iter()
            .find(|r| r.id == self.race_id)
            .ok_or_else(|| ProtocolError::InvalidPreferences(format!("unknown race {:?}", self.race_id)))?;
        if self.ranking.is_empty() {
            return Err(ProtocolError::InvalidPreferences(format!("empty ranking for {:?}", self.race_id)));
        }
        let mut seen = BTreeSet::new();
        for candidate in &self.ranking {
            if !race.candidates.contains(candidate) {
                return Err(ProtocolError::InvalidPreferences(format!(
                    "{candidate:?} is not a candidate in {:?}",
                    self.race_id
                )));
            }
            if !seen.insert(candidate) {
                return Err(ProtocolError::InvalidPreferences(format!("{candidate:?} ranked twice")));
            }
        }
        Ok(())
    }
}

/// Every entered ranking keyed by race; serializes as canonical JSON
/// (`{"race": ["cand", ...], ...}` with sorted keys, no whitespace).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Preferences(BTreeMap<String, Vec<String>>);

impl Preferences {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vectors(vectors: impl IntoIterator<Item = PreferenceVector>) -> Self {
        let mut prefs = Self::new();
        for v in vectors {
            prefs.insert(v);
        }
        prefs
    }

    pub fn insert(&mut self, v: PreferenceVector) {
        self.0.insert(v.race_id, v.ranking);
    }

    pub fn get(&self, race_id: &str) -> Option<&[String]> {
        self.0.get(race_id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn vectors(&self) -> impl Iterator<Item = PreferenceVector> + '_ {
        self.0.iter().map(|(race_id, ranking)| PreferenceVector {
            race_id: race_id.clone(),
            ranking: ranking.clone(),
        })
    }

    pub fn validate(&self, races: &[Race]) -> Result<(), ProtocolError> {
        if self.is_empty() {
            return Err(ProtocolError::InvalidPreferences("no preferences entered".into()));
        }
        self.vectors().try_for_each(|v| v.validate(races))
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.0).expect("string map serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ProtocolError> {
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::Malformed(format!("preferences: {e}")))
    }

    /// A uniformly random full ranking of every race.
    pub fn random<R: Rng>(races: &[Race], rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        Self::from_vectors(races.iter().map(|race| {
            let mut ranking = race.candidates.clone();
            ranking.shuffle(rng);
            PreferenceVector {
                race_id: race.id.clone(),
                ranking,
            }
        }))
    }
}

/// 12-digit decimal receipt number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Receipt(String);

impl Receipt {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Self(format!("{:012}", rng.gen_range(0..1_000_000_000_000u64)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Receipt {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != RECEIPT_DIGITS || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ProtocolError::Malformed(format!("receipt must be {RECEIPT_DIGITS} digits")));
        }
        Ok(Self(s.to_owned()))
    }
}

impl TryFrom<String> for Receipt {
    type Error = ProtocolError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Receipt> for String {
    fn from(r: Receipt) -> Self {
        r.0
    }
}

impl fmt::Display for Receipt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub identity: String,
    pub pin: String,
}

/// The iVoteID itself travels out of band, never in this response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginRequest {
    #[serde(rename = "voterID")]
    pub voter_id: LoginId,
}

/// `challenge || client nonce`, signed with the voter's key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRequest {
    #[serde(with = "b64")]
    pub response: Vec<u8>,
    pub signature: Signature,
}

impl TokenRequest {
    pub fn challenge(&self) -> Option<&[u8]> {
        self.response.get(..CHALLENGE_LEN)
    }
}

/// Stored encrypted snapshot of the voter's screens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialVote {
    pub eo: SealedBlob,
    pub signature: Signature,
}

impl PartialVote {
    pub fn signed_message(eo: &SealedBlob) -> Vec<u8> {
        eo.to_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenFile {
    pub election_public_key: ElectionPublicKey,
    pub races: Vec<Race>,
    pub partial_votes: Vec<PartialVote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub wrapped_key: WrappedKey,
    pub sealed_prefs: SealedBlob,
    pub signature: Signature,
}

impl Ballot {
    pub fn signed_message(wrapped_key: &WrappedKey, sealed_prefs: &SealedBlob) -> Vec<u8> {
        let mut msg = wrapped_key.to_bytes();
        msg.extend_from_slice(&sealed_prefs.to_bytes());
        msg
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CastResponse {
    pub receipt: Receipt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadbackRequest {
    pub ivote_id: String,
    pub pin: String,
    pub receipt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub stored: usize,
}

pub fn to_body<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("protocol messages serialize")
}

pub fn from_body<'a, T: Deserialize<'a>>(body: &'a str) -> Result<T, ProtocolError> {
    serde_json::from_str(body).map_err(|e| ProtocolError::Malformed(e.to_string()))
}
