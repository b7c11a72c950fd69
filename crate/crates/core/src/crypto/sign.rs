//! Ed25519 signing keys for voters and the server.

use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{b64, CryptoError};

pub const SECRET_KEY_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerifyingKey(ed25519_dalek::VerifyingKey);

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl SigningKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; SECRET_KEY_LEN];
        rng.fill_bytes(&mut seed);
        Self(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let seed: [u8; SECRET_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Validation(format!("signing key must be {SECRET_KEY_LEN} bytes")))?;
        Ok(Self(ed25519_dalek::SigningKey::from_bytes(&seed)))
    }

    pub fn to_bytes(&self) -> [u8; SECRET_KEY_LEN] {
        self.0.to_bytes()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey(self.0.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.0.sign(message).to_bytes())
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SigningKey").field(&self.verifying_key()).finish()
    }
}

impl VerifyingKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Validation(format!("verifying key must be {PUBLIC_KEY_LEN} bytes")))?;
        ed25519_dalek::VerifyingKey::from_bytes(&raw)
            .map(Self)
            .map_err(|_| CryptoError::Validation("verifying key is not a valid curve point".into()))
    }

    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.0.to_bytes()
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        self.0.verify(message, &sig).is_ok()
    }
}

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyingKey({})", hex::encode(self.to_bytes()))
    }
}

impl Signature {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| CryptoError::Validation(format!("signature must be {SIGNATURE_LEN} bytes")))
    }

    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

macro_rules! base64_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                b64::serialize(&self.to_bytes(), ser)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
                let bytes = b64::deserialize(de)?;
                <$ty>::from_bytes(&bytes).map_err(serde::de::Error::custom)
            }
        }
    };
}

base64_serde!(VerifyingKey);
base64_serde!(Signature);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha20Rng {
        rand_chacha::ChaCha20Rng::seed_from_u64(42)
    }

    #[test]
    fn sign_verify_round_trip() {
        let mut rng = rng();
        let sk = SigningKey::generate(&mut rng);
        let mut msg = [0u8; 64];
        rng.fill_bytes(&mut msg);
        let sig = sk.sign(&msg);
        assert!(sk.verifying_key().verify(&msg, &sig));
    }

    #[test]
    fn flipped_message_bit_fails() {
        let mut rng = rng();
        let sk = SigningKey::generate(&mut rng);
        let mut msg = [0u8; 64];
        rng.fill_bytes(&mut msg);
        let sig = sk.sign(&msg);
        for i in 0..msg.len() * 8 {
            let mut m = msg;
            m[i / 8] ^= 1 << (i % 8);
            assert!(!sk.verifying_key().verify(&m, &sig));
        }
    }

    #[test]
    fn other_key_fails() {
        let mut rng = rng();
        let a = SigningKey::generate(&mut rng);
        let b = SigningKey::generate(&mut rng);
        let sig = a.sign(b"msg");
        assert!(!b.verifying_key().verify(b"msg", &sig));
    }

    #[test]
    fn malformed_keys_are_validation_errors() {
        assert!(matches!(SigningKey::from_bytes(&[0u8; 31]), Err(CryptoError::Validation(_))));
        assert!(matches!(VerifyingKey::from_bytes(&[0u8; 33]), Err(CryptoError::Validation(_))));
        assert!(matches!(Signature::from_bytes(&[0u8; 63]), Err(CryptoError::Validation(_))));
    }

    #[test]
    fn key_bytes_round_trip() {
        let sk = SigningKey::generate(&mut rng());
        let again = SigningKey::from_bytes(&sk.to_bytes()).unwrap();
        assert_eq!(again.verifying_key(), sk.verifying_key());
        let json = serde_json::to_string(&sk.verifying_key()).unwrap();
        let pk: VerifyingKey = serde_json::from_str(&json).unwrap();
        assert_eq!(pk, sk.verifying_key());
    }
}
