//! Key derivation, sealing and signing primitives used by every party.

pub mod aead;
pub(crate) mod b64;
pub mod credential;
pub mod creds;
pub mod hybrid;
pub mod kdf;
pub mod sign;

use thiserror::Error;

pub use aead::{seal, seal_random, unseal, SealedBlob};
pub use credential::{open_credential_file, ChallengeObject, CredentialFile, KeyMaterial, VoterKeysId};
pub use creds::{Credentials, SchemeParams};
pub use hybrid::{ElectionPublicKey, ElectionSecretKey, WrappedKey};
pub use kdf::{derive_keystore_password_key, derive_login_id, DerivedKey, Kdf, KeyPurpose, LoginId};
pub use sign::{Signature, SigningKey, VerifyingKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("authentication tag mismatch")]
    Authentication,
    #[error("wrong credentials")]
    WrongCredentials,
    #[error("malformed credential file: {0}")]
    MalformedFile(String),
}
