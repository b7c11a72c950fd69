//! Election public-key encryption of per-ballot AES keys.
//!
//! A ballot key is wrapped with X25519 ECDH against the election key, an
//! HKDF-SHA256 key-encryption key, and AES-128-GCM. Wire form:
//! `ephemeral_public (32) || SealedBlob`.

use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use super::aead::{self, SealedBlob};
use super::{b64, CryptoError};

const WRAP_INFO: &[u8] = b"ivote ballot key wrap v1";
const POINT_LEN: usize = 32;

#[derive(Clone)]
pub struct ElectionSecretKey(StaticSecret);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectionPublicKey(PublicKey);

/// A 16-byte ballot key encrypted to the election public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedKey {
    ephemeral: [u8; POINT_LEN],
    sealed: SealedBlob,
}

impl ElectionSecretKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut raw = [0u8; 32];
        rng.fill_bytes(&mut raw);
        Self(StaticSecret::from(raw))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Validation("election secret key must be 32 bytes".into()))?;
        Ok(Self(StaticSecret::from(raw)))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public_key(&self) -> ElectionPublicKey {
        ElectionPublicKey(PublicKey::from(&self.0))
    }

    pub fn unwrap_key(&self, wrapped: &WrappedKey) -> Result<[u8; aead::KEY_LEN], CryptoError> {
        let ephemeral = PublicKey::from(wrapped.ephemeral);
        let shared = self.0.diffie_hellman(&ephemeral);
        let kek = kek(shared.as_bytes(), &wrapped.ephemeral, self.public_key().0.as_bytes());
        let key = aead::unseal(&kek, &wrapped.sealed)?;
        key.try_into()
            .map_err(|_| CryptoError::Validation("wrapped key has wrong length".into()))
    }
}

impl std::fmt::Debug for ElectionSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("ElectionSecretKey").field(&self.public_key()).finish()
    }
}

impl ElectionPublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let raw: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Validation("election public key must be 32 bytes".into()))?;
        Ok(Self(PublicKey::from(raw)))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn wrap_key<R: RngCore + CryptoRng>(&self, key: &[u8; aead::KEY_LEN], rng: &mut R) -> Result<WrappedKey, CryptoError> {
        let eph = ElectionSecretKey::generate(rng);
        let ephemeral = eph.public_key().to_bytes();
        let shared = eph.0.diffie_hellman(&self.0);
        let kek = kek(shared.as_bytes(), &ephemeral, self.0.as_bytes());
        let sealed = aead::seal_random(&kek, rng, key)?;
        Ok(WrappedKey { ephemeral, sealed })
    }
}

fn kek(shared: &[u8], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> [u8; aead::KEY_LEN] {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let mut out = [0u8; aead::KEY_LEN];
    Hkdf::<Sha256>::new(Some(&salt), shared)
        .expand(WRAP_INFO, &mut out)
        .expect("16 bytes is a valid HKDF length");
    out
}

impl WrappedKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.ephemeral.to_vec();
        out.extend_from_slice(&self.sealed.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < POINT_LEN + aead::MIN_SEALED_LEN {
            return Err(CryptoError::Validation("wrapped key too short".into()));
        }
        let (eph, rest) = bytes.split_at(POINT_LEN);
        Ok(Self {
            ephemeral: eph.try_into().expect("split at POINT_LEN"),
            sealed: SealedBlob::from_bytes(rest)?,
        })
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

base64_serde!(ElectionPublicKey);
base64_serde!(ElectionSecretKey);
base64_serde!(WrappedKey);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn wrap_unwrap_round_trip() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let sk = ElectionSecretKey::generate(&mut rng);
        let key = [9u8; 16];
        let wrapped = sk.public_key().wrap_key(&key, &mut rng).unwrap();
        assert_eq!(sk.unwrap_key(&wrapped).unwrap(), key);
        let parsed = WrappedKey::from_bytes(&wrapped.to_bytes()).unwrap();
        assert_eq!(sk.unwrap_key(&parsed).unwrap(), key);
    }

    #[test]
    fn other_election_key_cannot_unwrap() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let a = ElectionSecretKey::generate(&mut rng);
        let b = ElectionSecretKey::generate(&mut rng);
        let wrapped = a.public_key().wrap_key(&[1u8; 16], &mut rng).unwrap();
        assert_eq!(b.unwrap_key(&wrapped), Err(CryptoError::Authentication));
    }

    #[test]
    fn tampered_ephemeral_fails() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let sk = ElectionSecretKey::generate(&mut rng);
        let wrapped = sk.public_key().wrap_key(&[1u8; 16], &mut rng).unwrap();
        let mut bytes = wrapped.to_bytes();
        bytes[0] ^= 0x01;
        let tampered = WrappedKey::from_bytes(&bytes).unwrap();
        assert!(sk.unwrap_key(&tampered).is_err());
    }
}
