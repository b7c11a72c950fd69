//! The `credential.json` container and the client-side chain that opens it.
//!
//! ```text
//! k1        = PBKDF2(id,b64(sha256(pin)),"passKS"; vkp.salt; N iterations)
//! derived   = GCM-open(k1, vkp.password)
//! long      = PBKDF2(derived; vk.salt; 1 iteration)
//! kp        = GCM-open(long, vk.secrets["kp"])
//! sk        = GCM-open(long, vk.store)
//! ```
//!
//! `vk.store` stands in for the PKCS#12 keystore: it is a sealed blob holding
//! the raw signing key under the same long password.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::aead::{self, SealedBlob};
use super::creds::Credentials;
use super::kdf::{self, Kdf};
use super::sign::{Signature, SigningKey, VerifyingKey, SIGNATURE_LEN};
use super::{b64, CryptoError};

pub const COMMON_NAME_PREFIX: &str = "VoterAuth_";
pub const PARTIAL_KEY_NAME: &str = "kp";
pub const CHALLENGE_LEN: usize = 32;
pub const DERIVED_PASSWORD_LEN: usize = 32;

/// Identifier used in every post after login; carried in the voter
/// certificate's common name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VoterKeysId(String);

impl VoterKeysId {
    pub fn random<R: RngCore>(rng: &mut R) -> Self {
        let mut raw = [0u8; 12];
        rng.fill_bytes(&mut raw);
        Self(hex::encode(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for VoterKeysId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
            return Err(CryptoError::Validation(format!("invalid voterKeysId {s:?}")));
        }
        Ok(Self(s.to_owned()))
    }
}

impl TryFrom<String> for VoterKeysId {
    type Error = CryptoError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VoterKeysId> for String {
    fn from(id: VoterKeysId) -> Self {
        id.0
    }
}

impl fmt::Display for VoterKeysId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterCertificate {
    pub common_name: String,
    pub public_key: VerifyingKey,
}

impl VoterCertificate {
    pub fn voter_keys_id(&self) -> Result<VoterKeysId, CryptoError> {
        self.common_name
            .strip_prefix(COMMON_NAME_PREFIX)
            .ok_or_else(|| CryptoError::MalformedFile(format!("common name {:?} lacks {COMMON_NAME_PREFIX}", self.common_name)))?
            .parse()
            .map_err(|_| CryptoError::MalformedFile("bad voterKeysId in common name".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vad {
    pub voter_certificate: VoterCertificate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vk {
    #[serde(with = "b64::array")]
    pub salt: [u8; kdf::SALT_LEN],
    pub store: SealedBlob,
    pub secrets: BTreeMap<String, SealedBlob>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vkp {
    pub password: SealedBlob,
    #[serde(with = "b64::array")]
    pub salt: [u8; kdf::SALT_LEN],
}

/// Server challenge followed by the server's signature over it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChallengeObject(#[serde(with = "b64")] Vec<u8>);

impl ChallengeObject {
    pub fn new(challenge: &[u8; CHALLENGE_LEN], signature: &Signature) -> Self {
        let mut bytes = challenge.to_vec();
        bytes.extend_from_slice(&signature.to_bytes());
        Self(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn split(&self) -> Result<(&[u8], Signature), CryptoError> {
        if self.0.len() != CHALLENGE_LEN + SIGNATURE_LEN {
            return Err(CryptoError::MalformedFile("challenge object has wrong length".into()));
        }
        let (challenge, sig) = self.0.split_at(CHALLENGE_LEN);
        Ok((challenge, Signature::from_bytes(sig)?))
    }

    /// Checks the server signature over the challenge.
    pub fn verify(&self, server_key: &VerifyingKey) -> Result<&[u8], CryptoError> {
        let (challenge, sig) = self.split()?;
        if server_key.verify(challenge, &sig) {
            Ok(challenge)
        } else {
            Err(CryptoError::Authentication)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialFile {
    pub vad: Vad,
    pub vk: Vk,
    pub vkp: Vkp,
    pub challenge_object: ChallengeObject,
}

impl CredentialFile {
    pub fn voter_keys_id(&self) -> Result<VoterKeysId, CryptoError> {
        self.vad.voter_certificate.voter_keys_id()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("credential file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CryptoError> {
        serde_json::from_str(text).map_err(|e| CryptoError::MalformedFile(e.to_string()))
    }
}

/// Everything the browser holds after opening a credential file.
#[derive(Clone)]
pub struct KeyMaterial {
    pub kp: [u8; aead::KEY_LEN],
    pub sk: SigningKey,
    pub voter_keys_id: VoterKeysId,
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("voter_keys_id", &self.voter_keys_id)
            .field("sk", &self.sk)
            .finish_non_exhaustive()
    }
}

/// Runs the full decryption chain. Every decryption failure surfaces as the
/// same `WrongCredentials` error.
pub fn open_credential_file(kdf: &Kdf, creds: &Credentials, cf: &CredentialFile) -> Result<KeyMaterial, CryptoError> {
    let voter_keys_id = cf.voter_keys_id()?;
    let k1 = kdf.keystore_password_key(creds, &cf.vkp.salt)?;
    let derived_password = aead::unseal(k1.bytes(), &cf.vkp.password).map_err(|_| CryptoError::WrongCredentials)?;
    let long = kdf::long_password(&derived_password, &cf.vk.salt)?;

    let sealed_kp = cf
        .vk
        .secrets
        .get(PARTIAL_KEY_NAME)
        .ok_or_else(|| CryptoError::MalformedFile("secrets has no \"kp\" entry".into()))?;
    let kp = aead::unseal(long.bytes(), sealed_kp).map_err(|_| CryptoError::WrongCredentials)?;
    let kp: [u8; aead::KEY_LEN] = kp
        .as_slice()
        .try_into()
        .map_err(|_| CryptoError::MalformedFile("kp is not 16 bytes".into()))?;

    let sk_bytes = aead::unseal(long.bytes(), &cf.vk.store).map_err(|_| CryptoError::WrongCredentials)?;
    let sk = SigningKey::from_bytes(&sk_bytes).map_err(|_| CryptoError::MalformedFile("keystore holds no signing key".into()))?;
    if sk.verifying_key() != cf.vad.voter_certificate.public_key {
        return Err(CryptoError::MalformedFile("keystore key does not match voter certificate".into()));
    }

    Ok(KeyMaterial { kp, sk, voter_keys_id })
}

/// Secrets a credential file is built around.
pub struct CredentialSecrets {
    pub kp: [u8; aead::KEY_LEN],
    pub sk: SigningKey,
    pub voter_keys_id: VoterKeysId,
    pub challenge_object: ChallengeObject,
}

/// Builds a file that [`open_credential_file`] inverts. Salts, the derived
/// password and all nonces are drawn fresh from `rng`.
pub fn seal_credential_file<R: RngCore + CryptoRng>(
    kdf: &Kdf,
    creds: &Credentials,
    secrets: &CredentialSecrets,
    rng: &mut R,
) -> Result<CredentialFile, CryptoError> {
    let mut vkp_salt = [0u8; kdf::SALT_LEN];
    let mut vk_salt = [0u8; kdf::SALT_LEN];
    let mut derived_password = [0u8; DERIVED_PASSWORD_LEN];
    rng.fill_bytes(&mut vkp_salt);
    rng.fill_bytes(&mut vk_salt);
    rng.fill_bytes(&mut derived_password);

    let k1 = kdf.keystore_password_key(creds, &vkp_salt)?;
    let password = aead::seal_random(k1.bytes(), rng, &derived_password)?;
    let long = kdf::long_password(&derived_password, &vk_salt)?;
    let store = aead::seal_random(long.bytes(), rng, &secrets.sk.to_bytes())?;
    let sealed_kp = aead::seal_random(long.bytes(), rng, &secrets.kp)?;

    Ok(CredentialFile {
        vad: Vad {
            voter_certificate: VoterCertificate {
                common_name: format!("{COMMON_NAME_PREFIX}{}", secrets.voter_keys_id),
                public_key: secrets.sk.verifying_key(),
            },
        },
        vk: Vk {
            salt: vk_salt,
            store,
            secrets: BTreeMap::from([(PARTIAL_KEY_NAME.to_owned(), sealed_kp)]),
        },
        vkp: Vkp { password, salt: vkp_salt },
        challenge_object: secrets.challenge_object.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn kdf() -> Kdf {
        Kdf::new(16).unwrap()
    }

    fn secrets(rng: &mut ChaCha20Rng, id: &str) -> CredentialSecrets {
        let server = SigningKey::generate(rng);
        let mut challenge = [0u8; CHALLENGE_LEN];
        rng.fill_bytes(&mut challenge);
        let mut kp = [0u8; 16];
        rng.fill_bytes(&mut kp);
        CredentialSecrets {
            kp,
            sk: SigningKey::generate(rng),
            voter_keys_id: id.parse().unwrap(),
            challenge_object: ChallengeObject::new(&challenge, &server.sign(&challenge)),
        }
    }

    #[test]
    fn open_inverts_seal() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let creds = Credentials::new("12345678", "654321").unwrap();
        let s = secrets(&mut rng, "abc123");
        let cf = seal_credential_file(&kdf(), &creds, &s, &mut rng).unwrap();
        let km = open_credential_file(&kdf(), &creds, &cf).unwrap();
        assert_eq!(km.kp, s.kp);
        assert_eq!(km.sk.verifying_key(), s.sk.verifying_key());
        assert_eq!(km.voter_keys_id.as_str(), "abc123");
    }

    #[test]
    fn wrong_pin_or_id_is_wrong_credentials() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let creds = Credentials::new("12345678", "654321").unwrap();
        let cf = seal_credential_file(&kdf(), &creds, &secrets(&mut rng, "x1"), &mut rng).unwrap();
        for (id, pin) in [("12345678", "654320"), ("12345679", "654321")] {
            let other = Credentials::new(id, pin).unwrap();
            assert_eq!(
                open_credential_file(&kdf(), &other, &cf).unwrap_err(),
                CryptoError::WrongCredentials
            );
        }
    }

    #[test]
    fn missing_kp_is_malformed() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let creds = Credentials::new("12345678", "654321").unwrap();
        let mut cf = seal_credential_file(&kdf(), &creds, &secrets(&mut rng, "x1"), &mut rng).unwrap();
        cf.vk.secrets.clear();
        assert!(matches!(
            open_credential_file(&kdf(), &creds, &cf),
            Err(CryptoError::MalformedFile(_))
        ));
    }

    #[test]
    fn voter_keys_id_parsed_from_common_name() {
        let cert = VoterCertificate {
            common_name: "VoterAuth_abc123".into(),
            public_key: SigningKey::generate(&mut ChaCha20Rng::seed_from_u64(0)).verifying_key(),
        };
        assert_eq!(cert.voter_keys_id().unwrap().as_str(), "abc123");
        let bad = VoterCertificate {
            common_name: "Voter_abc123".into(),
            ..cert
        };
        assert!(bad.voter_keys_id().is_err());
    }

    #[test]
    fn two_files_for_same_creds_differ_but_both_open() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let creds = Credentials::new("00000000", "000000").unwrap();
        let s = secrets(&mut rng, "k");
        let a = seal_credential_file(&kdf(), &creds, &s, &mut rng).unwrap();
        let b = seal_credential_file(&kdf(), &creds, &s, &mut rng).unwrap();
        assert_ne!(a.to_json(), b.to_json());
        assert!(open_credential_file(&kdf(), &creds, &a).is_ok());
        assert!(open_credential_file(&kdf(), &creds, &b).is_ok());
    }

    #[test]
    fn json_round_trip_and_field_names() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let creds = Credentials::new("00000000", "000000").unwrap();
        let cf = seal_credential_file(&kdf(), &creds, &secrets(&mut rng, "k"), &mut rng).unwrap();
        let json = cf.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for path in [
            "/vad/voter_certificate/common_name",
            "/vk/salt",
            "/vk/store",
            "/vk/secrets/kp",
            "/vkp/password",
            "/vkp/salt",
            "/challenge_object",
        ] {
            assert!(v.pointer(path).is_some(), "{path}");
        }
        assert_eq!(CredentialFile::from_json(&json).unwrap(), cf);
    }

    #[test]
    fn challenge_object_verification() {
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let s = secrets(&mut rng, "k");
        let other = SigningKey::generate(&mut rng);
        assert_eq!(s.challenge_object.verify(&other.verifying_key()), Err(CryptoError::Authentication));
        assert!(ChallengeObject::from_bytes(vec![0; 10]).split().is_err());
    }
}
