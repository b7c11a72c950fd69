//! Serde adapters for octet strings carried as standard, padded Base64.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{de, Deserialize, Deserializer, Serializer};

pub fn encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(text)
}

pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_str(&encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
    let text = String::deserialize(de)?;
    decode(&text).map_err(de::Error::custom)
}

/// Fixed-length variant.
pub mod array {
    use super::*;

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(de: D) -> Result<[u8; N], D::Error> {
        let bytes = super::deserialize(de)?;
        <[u8; N]>::try_from(bytes.as_slice()).map_err(|_| de::Error::custom(format!("expected {N} bytes, got {}", bytes.len())))
    }
}
