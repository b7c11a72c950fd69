//! Request/response envelopes and endpoint paths.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::VoterKeysId;

use super::ProtocolError;

pub const DEFAULT_VERSION: &str = "1";

/// Server paths. The `v` query value is carried verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Register,
    LoginPage,
    Login,
    Token { voter_keys_id: VoterKeysId, version: String },
    PartialVote { voter_keys_id: VoterKeysId, version: String },
    Vote { voter_keys_id: VoterKeysId, version: String },
    Readback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Register,
    LoginPage,
    Login,
    Token,
    PartialVote,
    Vote,
    Readback,
}

impl Endpoint {
    pub fn token(id: &VoterKeysId) -> Self {
        Self::Token {
            voter_keys_id: id.clone(),
            version: DEFAULT_VERSION.into(),
        }
    }

    pub fn partial_vote(id: &VoterKeysId) -> Self {
        Self::PartialVote {
            voter_keys_id: id.clone(),
            version: DEFAULT_VERSION.into(),
        }
    }

    pub fn vote(id: &VoterKeysId) -> Self {
        Self::Vote {
            voter_keys_id: id.clone(),
            version: DEFAULT_VERSION.into(),
        }
    }

    pub fn kind(&self) -> EndpointKind {
        match self {
            Self::Register => EndpointKind::Register,
            Self::LoginPage => EndpointKind::LoginPage,
            Self::Login => EndpointKind::Login,
            Self::Token { .. } => EndpointKind::Token,
            Self::PartialVote { .. } => EndpointKind::PartialVote,
            Self::Vote { .. } => EndpointKind::Vote,
            Self::Readback => EndpointKind::Readback,
        }
    }

    pub fn voter_keys_id(&self) -> Option<&VoterKeysId> {
        match self {
            Self::Token { voter_keys_id, .. } | Self::PartialVote { voter_keys_id, .. } | Self::Vote { voter_keys_id, .. } => {
                Some(voter_keys_id)
            }
            _ => None,
        }
    }

    pub fn path(&self) -> String {
        match self {
            Self::Register => "registration/register".into(),
            Self::LoginPage => "ivote-cvs/login".into(),
            Self::Login => "vote-encoder/login".into(),
            Self::Token { voter_keys_id, version } => format!("vote-encoder/token/{voter_keys_id}?v={version}"),
            Self::PartialVote { voter_keys_id, version } => format!("vote-encoder/partial_vote/{voter_keys_id}?v={version}"),
            Self::Vote { voter_keys_id, version } => format!("vote-encoder/vote/{voter_keys_id}?v={version}"),
            Self::Readback => "verification/readback".into(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

impl FromStr for Endpoint {
    type Err = ProtocolError;

    fn from_str(path: &str) -> Result<Self, Self::Err> {
        match path {
            "registration/register" => return Ok(Self::Register),
            "ivote-cvs/login" => return Ok(Self::LoginPage),
            "vote-encoder/login" => return Ok(Self::Login),
            "verification/readback" => return Ok(Self::Readback),
            _ => {}
        }
        let unknown = || ProtocolError::UnknownEndpoint(path.to_owned());
        let rest = path.strip_prefix("vote-encoder/").ok_or_else(unknown)?;
        let (kind, rest) = rest.split_once('/').ok_or_else(unknown)?;
        let (id, query) = rest.split_once('?').ok_or_else(unknown)?;
        let version = query.strip_prefix("v=").ok_or_else(unknown)?.to_owned();
        let voter_keys_id: VoterKeysId = id.parse().map_err(|_| unknown())?;
        match kind {
            "token" => Ok(Self::Token { voter_keys_id, version }),
            "partial_vote" => Ok(Self::PartialVote { voter_keys_id, version }),
            "vote" => Ok(Self::Vote { voter_keys_id, version }),
            _ => Err(unknown()),
        }
    }
}

/// One request on the wire: `{endpoint, voter_keys_id?, body, cookies?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voter_keys_id: Option<VoterKeysId>,
    pub body: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cookies: BTreeMap<String, String>,
}

impl Request {
    pub fn new(endpoint: &Endpoint, body: String) -> Self {
        Self {
            endpoint: endpoint.path(),
            voter_keys_id: endpoint.voter_keys_id().cloned(),
            body,
            cookies: BTreeMap::new(),
        }
    }

    pub fn parsed_endpoint(&self) -> Result<Endpoint, ProtocolError> {
        self.endpoint.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCookie {
    pub name: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_age_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub status: Status,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set_cookies: Vec<SetCookie>,
}

/// Error categories a server may report. Kept coarse so error responses
/// do not leak which check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    BadRequest,
    Validation,
    Capacity,
    NotFound,
    Authentication,
    AlreadyVoted,
    VerificationFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorKind,
    pub message: String,
}

impl Response {
    pub fn ok(body: String) -> Self {
        Self {
            status: Status::Ok,
            body,
            set_cookies: Vec::new(),
        }
    }

    pub fn error(kind: ErrorKind, message: impl Into<String>) -> Self {
        let body = ErrorBody {
            error: kind,
            message: message.into(),
        };
        Self {
            status: Status::Error,
            body: serde_json::to_string(&body).expect("error body serializes"),
            set_cookies: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn error_body(&self) -> Option<ErrorBody> {
        match self.status {
            Status::Ok => None,
            Status::Error => serde_json::from_str(&self.body).ok(),
        }
    }
}
