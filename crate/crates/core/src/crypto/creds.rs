use std::fmt;

use serde::{Deserialize, Serialize};

use super::CryptoError;

pub const DEFAULT_ID_DIGITS: usize = 8;
pub const DEFAULT_PIN_DIGITS: usize = 6;
pub const DEFAULT_ITERATIONS: u32 = 8000;

/// Sizes of the credential space and the PBKDF2 work factor.
///
/// The defaults are the deployed values; tests and simulations shrink them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub id_digits: usize,
    pub pin_digits: usize,
    pub iterations: u32,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self {
            id_digits: DEFAULT_ID_DIGITS,
            pin_digits: DEFAULT_PIN_DIGITS,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

impl SchemeParams {
    pub fn validate(&self) -> Result<(), CryptoError> {
        if !(1..=18).contains(&self.id_digits) {
            return Err(CryptoError::Validation(format!("id_digits must be 1..=18, got {}", self.id_digits)));
        }
        if !(1..=18).contains(&self.pin_digits) {
            return Err(CryptoError::Validation(format!(
                "pin_digits must be 1..=18, got {}",
                self.pin_digits
            )));
        }
        if self.iterations == 0 {
            return Err(CryptoError::Validation("iterations must be positive".into()));
        }
        Ok(())
    }
}

/// The (iVoteID, PIN) pair every client secret is derived from.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Credentials {
    ivote_id: String,
    pin: String,
}

impl Credentials {
    /// Credentials with the deployed lengths (8-digit id, 6-digit PIN).
    pub fn new(ivote_id: &str, pin: &str) -> Result<Self, CryptoError> {
        Self::with_lengths(ivote_id, pin, DEFAULT_ID_DIGITS, DEFAULT_PIN_DIGITS)
    }

    pub fn with_params(ivote_id: &str, pin: &str, params: &SchemeParams) -> Result<Self, CryptoError> {
        Self::with_lengths(ivote_id, pin, params.id_digits, params.pin_digits)
    }

    pub fn with_lengths(ivote_id: &str, pin: &str, id_digits: usize, pin_digits: usize) -> Result<Self, CryptoError> {
        check_digits("iVoteID", ivote_id, id_digits)?;
        check_digits("PIN", pin, pin_digits)?;
        Ok(Self {
            ivote_id: ivote_id.to_owned(),
            pin: pin.to_owned(),
        })
    }

    pub fn ivote_id(&self) -> &str {
        &self.ivote_id
    }

    pub fn pin(&self) -> &str {
        &self.pin
    }
}

// Keep secrets out of logs.
impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credentials")
            .field("ivote_id", &self.ivote_id)
            .field("pin", &"******")
            .finish()
    }
}

pub(crate) fn check_digits(what: &str, value: &str, digits: usize) -> Result<(), CryptoError> {
    if value.len() != digits || !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CryptoError::Validation(format!("{what} must be exactly {digits} decimal digits")));
    }
    Ok(())
}
