//! AES-128-GCM sealing with the nonce stored as a 12-byte prefix.

use aes_gcm::aead::Aead;
use aes_gcm::{Aes128Gcm, KeyInit, Nonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{b64, CryptoError};

pub const KEY_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const MIN_SEALED_LEN: usize = NONCE_LEN + TAG_LEN;

/// `nonce || ciphertext || tag`, serialized as one Base64 string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SealedBlob {
    nonce: [u8; NONCE_LEN],
    ciphertext_and_tag: Vec<u8>,
}

impl SealedBlob {
    pub fn nonce(&self) -> &[u8; NONCE_LEN] {
        &self.nonce
    }

    pub fn ciphertext_and_tag(&self) -> &[u8] {
        &self.ciphertext_and_tag
    }

    pub fn len(&self) -> usize {
        NONCE_LEN + self.ciphertext_and_tag.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext_and_tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < MIN_SEALED_LEN {
            return Err(CryptoError::Validation(format!(
                "sealed blob must be at least {MIN_SEALED_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        Ok(Self {
            nonce: nonce.try_into().expect("split at NONCE_LEN"),
            ciphertext_and_tag: rest.to_vec(),
        })
    }

    pub fn to_base64(&self) -> String {
        b64::encode(&self.to_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        let bytes = b64::decode(text).map_err(|e| CryptoError::Validation(format!("sealed blob: {e}")))?;
        Self::from_bytes(&bytes)
    }
}

impl Serialize for SealedBlob {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for SealedBlob {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let text = String::deserialize(de)?;
        Self::from_base64(&text).map_err(serde::de::Error::custom)
    }
}

fn cipher(key: &[u8]) -> Result<Aes128Gcm, CryptoError> {
    if key.len() != KEY_LEN {
        return Err(CryptoError::Validation(format!("key must be {KEY_LEN} bytes, got {}", key.len())));
    }
    Ok(Aes128Gcm::new_from_slice(key).expect("length checked"))
}

pub fn seal(key: &[u8], nonce: &[u8], plaintext: &[u8]) -> Result<SealedBlob, CryptoError> {
    let nonce: [u8; NONCE_LEN] = nonce
        .try_into()
        .map_err(|_| CryptoError::Validation(format!("nonce must be {NONCE_LEN} bytes, got {}", nonce.len())))?;
    let ciphertext_and_tag = cipher(key)?
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::Validation("plaintext too long".into()))?;
    Ok(SealedBlob { nonce, ciphertext_and_tag })
}

/// Seal under a fresh random nonce.
pub fn seal_random<R: RngCore + CryptoRng>(key: &[u8], rng: &mut R, plaintext: &[u8]) -> Result<SealedBlob, CryptoError> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    seal(key, &nonce, plaintext)
}

/// Authenticates before releasing any plaintext.
pub fn unseal(key: &[u8], blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
    cipher(key)?
        .decrypt(Nonce::from_slice(&blob.nonce), blob.ciphertext_and_tag.as_slice())
        .map_err(|_| CryptoError::Authentication)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};

    fn h(s: &str) -> Vec<u8> {
        hex::decode(s).unwrap()
    }

    // McGrew & Viega GCM test cases 1-3 (AES-128, no AAD).
    #[test]
    fn gcm_reference_vectors() {
        let blob = seal(&[0; 16], &[0; 12], b"").unwrap();
        assert_eq!(blob.ciphertext_and_tag(), h("58e2fccefa7e3061367f1d57a4e7455a"));

        let blob = seal(&[0; 16], &[0; 12], &[0; 16]).unwrap();
        assert_eq!(
            blob.ciphertext_and_tag(),
            h("0388dace60b6a392f328c2b971b2fe78ab6e47d42cec13bdf53a67b21257bddf")
        );

        let key = h("feffe9928665731c6d6a8f9467308308");
        let nonce = h("cafebabefacedbaddecaf888");
        let pt = h("d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72\
                    1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255");
        let blob = seal(&key, &nonce, &pt).unwrap();
        let expected = h("42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e\
                          21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091473f5985\
                          4d5c2af327cd64a62cf35abd2ba6fab4");
        assert_eq!(blob.ciphertext_and_tag(), expected);
        assert_eq!(&blob.to_bytes()[..12], nonce.as_slice());
        assert_eq!(unseal(&key, &blob).unwrap(), pt);
    }

    #[test]
    fn round_trip_one_kib() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let mut key = [0u8; 16];
        let mut pt = vec![0u8; 1024];
        rng.fill_bytes(&mut key);
        rng.fill_bytes(&mut pt);
        let blob = seal_random(&key, &mut rng, &pt).unwrap();
        assert_eq!(unseal(&key, &blob).unwrap(), pt);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let key = [7u8; 16];
        let blob = seal(&key, &[3u8; 12], b"partial vote").unwrap();
        let bytes = blob.to_bytes();
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut tampered = bytes.clone();
                tampered[i] ^= 1 << bit;
                let t = SealedBlob::from_bytes(&tampered).unwrap();
                assert_eq!(unseal(&key, &t), Err(CryptoError::Authentication), "byte {i} bit {bit}");
            }
        }
    }

    #[test]
    fn wrong_key_fails() {
        let blob = seal(&[1u8; 16], &[0u8; 12], b"x").unwrap();
        assert_eq!(unseal(&[2u8; 16], &blob), Err(CryptoError::Authentication));
    }

    #[test]
    fn length_validation() {
        assert!(matches!(seal(&[0u8; 15], &[0u8; 12], b""), Err(CryptoError::Validation(_))));
        assert!(matches!(seal(&[0u8; 16], &[0u8; 16], b""), Err(CryptoError::Validation(_))));
        assert!(matches!(SealedBlob::from_bytes(&[0u8; 27]), Err(CryptoError::Validation(_))));
        assert!(SealedBlob::from_bytes(&[0u8; 28]).is_ok());
    }

    #[test]
    fn json_form_is_single_base64_string() {
        let blob = seal(&[0; 16], &[0; 12], b"").unwrap();
        let json = serde_json::to_string(&blob).unwrap();
        assert_eq!(json, format!("\"{}\"", blob.to_base64()));
        let back: SealedBlob = serde_json::from_str(&json).unwrap();
        assert_eq!(back, blob);
    }

    proptest! {
        #[test]
        fn seal_unseal_inverse(key in prop::array::uniform16(any::<u8>()),
                               nonce in prop::array::uniform12(any::<u8>()),
                               pt in prop::collection::vec(any::<u8>(), 0..512)) {
            let blob = seal(&key, &nonce, &pt).unwrap();
            prop_assert_eq!(unseal(&key, &blob).unwrap(), pt);
        }

        #[test]
        fn serialization_is_identity(bytes in prop::collection::vec(any::<u8>(), 28..256)) {
            let blob = SealedBlob::from_bytes(&bytes).unwrap();
            prop_assert_eq!(blob.to_bytes(), bytes.clone());
            prop_assert_eq!(SealedBlob::from_base64(&blob.to_base64()).unwrap(), blob);
        }
    }
}
