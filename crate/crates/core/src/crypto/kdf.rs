//! Client-side key derivations.
//!
//! Every secret the browser holds descends from one string,
//! `iVoteID + "," + Base64(SHA256(PIN)) + "," + suffix`, fed to
//! PBKDF2-HMAC-SHA1 with a 16-byte output. The suffix selects the purpose:
//! `voterid` for the login identifier (salt: 20 zero bytes) and `passKS` for
//! the key that opens the `vkp` password (salt: taken from the credential file).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

use super::creds::{Credentials, DEFAULT_ITERATIONS};
use super::{b64, CryptoError};

pub const KEY_LEN: usize = 16;
pub const LOGIN_SALT: [u8; 20] = [0; 20];
pub const SALT_LEN: usize = 16;
pub const LOGIN_SUFFIX: &str = "voterid";
pub const KEYSTORE_SUFFIX: &str = "passKS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPurpose {
    LoginId,
    KeystorePassword,
    LongPassword,
}

/// A 16-byte PBKDF2 output tagged with what it is for.
#[derive(Clone, PartialEq, Eq)]
pub struct DerivedKey {
    bytes: [u8; KEY_LEN],
    purpose: KeyPurpose,
}

impl DerivedKey {
    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    pub fn purpose(&self) -> KeyPurpose {
        self.purpose
    }
}

impl fmt::Debug for DerivedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DerivedKey").field("purpose", &self.purpose).finish_non_exhaustive()
    }
}

/// The hex-encoded login derivation posted at login (the protocol's `voterID`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LoginId(String);

impl LoginId {
    pub fn from_bytes(bytes: &[u8; KEY_LEN]) -> Self {
        Self(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn to_bytes(&self) -> [u8; KEY_LEN] {
        let mut out = [0u8; KEY_LEN];
        hex::decode_to_slice(&self.0, &mut out).expect("validated at construction");
        out
    }
}

impl FromStr for LoginId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 2 * KEY_LEN || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(CryptoError::Validation("login id must be 32 lowercase hex characters".into()));
        }
        Ok(Self(s.to_owned()))
    }
}

impl TryFrom<String> for LoginId {
    type Error = CryptoError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LoginId> for String {
    fn from(id: LoginId) -> Self {
        id.0
    }
}

impl fmt::Display for LoginId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `Base64(SHA256(pin))`, standard alphabet with padding.
pub fn pin_digest_b64(pin: &str) -> String {
    b64::encode(&Sha256::digest(pin.as_bytes()))
}

/// The PBKDF2 password string for `suffix`.
pub fn credential_string(creds: &Credentials, suffix: &str) -> String {
    format!("{},{},{}", creds.ivote_id(), pin_digest_b64(creds.pin()), suffix)
}

/// PBKDF2-HMAC-SHA1 truncated to 16 bytes.
pub fn pbkdf2_sha1(password: &[u8], salt: &[u8], iterations: u32) -> [u8; KEY_LEN] {
    let mut out = [0u8; KEY_LEN];
    pbkdf2_sha1_into(password, salt, iterations, &mut out);
    out
}

/// PBKDF2-HMAC-SHA1 filling `out` (any length).
pub fn pbkdf2_sha1_into(password: &[u8], salt: &[u8], iterations: u32, out: &mut [u8]) {
    pbkdf2::pbkdf2_hmac::<Sha1>(password, salt, iterations, out);
}

/// The derivation chain with a configurable work factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kdf {
    iterations: u32,
}

impl Default for Kdf {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

impl Kdf {
    pub fn new(iterations: u32) -> Result<Self, CryptoError> {
        if iterations == 0 {
            return Err(CryptoError::Validation("iterations must be positive".into()));
        }
        Ok(Self { iterations })
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn login_key(&self, creds: &Credentials) -> DerivedKey {
        let password = credential_string(creds, LOGIN_SUFFIX);
        DerivedKey {
            bytes: pbkdf2_sha1(password.as_bytes(), &LOGIN_SALT, self.iterations),
            purpose: KeyPurpose::LoginId,
        }
    }

    pub fn login_id(&self, creds: &Credentials) -> LoginId {
        LoginId::from_bytes(self.login_key(creds).bytes())
    }

    /// Key opening the `vkp` password blob; `salt` is the `vkp` salt.
    pub fn keystore_password_key(&self, creds: &Credentials, salt: &[u8]) -> Result<DerivedKey, CryptoError> {
        if salt.len() != SALT_LEN {
            return Err(CryptoError::Validation(format!(
                "salt must be {SALT_LEN} bytes, got {}",
                salt.len()
            )));
        }
        let password = credential_string(creds, KEYSTORE_SUFFIX);
        Ok(DerivedKey {
            bytes: pbkdf2_sha1(password.as_bytes(), salt, self.iterations),
            purpose: KeyPurpose::KeystorePassword,
        })
    }
}

/// The long password: one PBKDF2 iteration over the decrypted derived password.
pub fn long_password(derived_password: &[u8], vk_salt: &[u8]) -> Result<DerivedKey, CryptoError> {
    if vk_salt.len() != SALT_LEN {
        return Err(CryptoError::Validation(format!(
            "salt must be {SALT_LEN} bytes, got {}",
            vk_salt.len()
        )));
    }
    Ok(DerivedKey {
        bytes: pbkdf2_sha1(derived_password, vk_salt, 1),
        purpose: KeyPurpose::LongPassword,
    })
}

/// Login id with the deployed 8000 iterations.
pub fn derive_login_id(creds: &Credentials) -> LoginId {
    Kdf::default().login_id(creds)
}

/// Keystore password key with the deployed 8000 iterations.
pub fn derive_keystore_password_key(creds: &Credentials, salt: &[u8]) -> Result<DerivedKey, CryptoError> {
    Kdf::default().keystore_password_key(creds, salt)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from Python's hashlib.pbkdf2_hmac, computed before this module existed.
    const LOGIN_00000000_000000: &str = "6c7c470643e804d0a5771b7351741a25";
    const LOGIN_12345678_654321: &str = "8121c6db6f5d8d41a7c6fe24ef22f2c5";
    const LOGIN_12345678_654321_80: &str = "97b0cef7501af461a8c0a3ffeab2f918";
    const KEYSTORE_00000000_000000_ZERO_SALT: &str = "ca78b1819431934ad8e2773506d035cf";
    const KEYSTORE_12345678_654321_SEQ_SALT: &str = "d4a6dda0bb0d670d16cf052117b2a61b";
    const LONG_PASSWORD_SAMPLE: &str = "67146bc3028399c53eeda6c995e76886";

    fn creds(id: &str, pin: &str) -> Credentials {
        Credentials::new(id, pin).unwrap()
    }

    #[test]
    fn pin_digest_is_standard_padded_base64() {
        assert_eq!(pin_digest_b64("000000"), "kbTRQoI/fSDF8I32kSLeQ/NfBXqYjZYZ9tMThIXJogM=");
        assert_eq!(
            credential_string(&creds("00000000", "000000"), LOGIN_SUFFIX),
            "00000000,kbTRQoI/fSDF8I32kSLeQ/NfBXqYjZYZ9tMThIXJogM=,voterid"
        );
    }

    #[test]
    fn login_id_reference_vectors() {
        assert_eq!(derive_login_id(&creds("00000000", "000000")).as_str(), LOGIN_00000000_000000);
        assert_eq!(derive_login_id(&creds("12345678", "654321")).as_str(), LOGIN_12345678_654321);
        let kdf = Kdf::new(80).unwrap();
        assert_eq!(kdf.login_id(&creds("12345678", "654321")).as_str(), LOGIN_12345678_654321_80);
    }

    #[test]
    fn login_id_shape_and_determinism() {
        let c = creds("12345678", "654321");
        let a = derive_login_id(&c);
        let b = derive_login_id(&c);
        assert_eq!(a, b);
        assert_eq!(a.as_str().len(), 32);
        assert!(a.as_str().bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()));
    }

    #[test]
    fn keystore_key_reference_vectors() {
        let k = derive_keystore_password_key(&creds("00000000", "000000"), &[0u8; 16]).unwrap();
        assert_eq!(hex::encode(k.bytes()), KEYSTORE_00000000_000000_ZERO_SALT);
        assert_eq!(k.purpose(), KeyPurpose::KeystorePassword);
        let salt: Vec<u8> = (0..16).collect();
        let k = derive_keystore_password_key(&creds("12345678", "654321"), &salt).unwrap();
        assert_eq!(hex::encode(k.bytes()), KEYSTORE_12345678_654321_SEQ_SALT);
    }

    #[test]
    fn keystore_key_rejects_bad_salt() {
        assert!(derive_keystore_password_key(&creds("00000000", "000000"), &[0u8; 20]).is_err());
    }

    #[test]
    fn long_password_reference_vector() {
        let salt: Vec<u8> = (0..16).collect();
        let k = long_password(b"derived-password", &salt).unwrap();
        assert_eq!(hex::encode(k.bytes()), LONG_PASSWORD_SAMPLE);
    }

    #[test]
    fn keystore_key_differs_from_login_id_over_sample() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let kdf = Kdf::default();
        for _ in 0..100 {
            let id = format!("{:08}", rng.gen_range(0..100_000_000u32));
            let pin = format!("{:06}", rng.gen_range(0..1_000_000u32));
            let c = creds(&id, &pin);
            let mut salt = [0u8; 16];
            rng.fill(&mut salt);
            let ks = kdf.keystore_password_key(&c, &salt).unwrap();
            assert_ne!(ks.bytes(), kdf.login_key(&c).bytes());
        }
    }

    #[test]
    fn login_id_parse() {
        assert!("6c7c470643e804d0a5771b7351741a25".parse::<LoginId>().is_ok());
        assert!("6C7C470643E804D0A5771B7351741A25".parse::<LoginId>().is_err());
        assert!("6c7c".parse::<LoginId>().is_err());
        let id: LoginId = LOGIN_00000000_000000.parse().unwrap();
        assert_eq!(LoginId::from_bytes(&id.to_bytes()), id);
    }
}
