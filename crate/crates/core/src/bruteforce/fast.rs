//! PBKDF2-HMAC-SHA1 for the search loop. The HMAC key's inner and outer
//! pad states are hashed once per candidate, after which each iteration is
//! exactly two SHA-1 compressions.

use sha1::digest::core_api::Block;
use sha1::{Digest, Sha1, Sha1Core};

const H0: [u32; 5] = [0x6745_2301, 0xEFCD_AB89, 0x98BA_DCFE, 0x1032_5476, 0xC3D2_E1F0];
const BLOCK: usize = 64;
/// Longest salt for which `salt || INT(1)` still fits one padded block.
pub const MAX_SALT_LEN: usize = BLOCK - 4 - 1 - 8;

pub struct HmacSha1 {
    inner: [u32; 5],
    outer: [u32; 5],
}

impl HmacSha1 {
    pub fn new(key: &[u8]) -> Self {
        let mut k = [0u8; BLOCK];
        if key.len() > BLOCK {
            k[..20].copy_from_slice(&Sha1::digest(key));
        } else {
            k[..key.len()].copy_from_slice(key);
        }
        let mut ipad = Block::<Sha1Core>::default();
        let mut opad = Block::<Sha1Core>::default();
        for i in 0..BLOCK {
            ipad[i] = k[i] ^ 0x36;
            opad[i] = k[i] ^ 0x5c;
        }
        let mut inner = H0;
        let mut outer = H0;
        sha1::compress(&mut inner, std::slice::from_ref(&ipad));
        sha1::compress(&mut outer, std::slice::from_ref(&opad));
        Self { inner, outer }
    }

    /// Finishes a hash whose remaining message (after the 64-byte pad block)
    /// is `block[..msg_len]`; the block must already hold the message.
    #[inline(always)]
    fn finish(state: [u32; 5], block: &mut Block<Sha1Core>, msg_len: usize) -> [u32; 5] {
        block[msg_len] = 0x80;
        block[msg_len + 1..BLOCK - 8].fill(0);
        let bits = ((BLOCK + msg_len) as u64) * 8;
        block[BLOCK - 8..].copy_from_slice(&bits.to_be_bytes());
        let mut s = state;
        sha1::compress(&mut s, std::slice::from_ref(block));
        s
    }

    #[inline(always)]
    fn outer_of(&self, inner: [u32; 5], block: &mut Block<Sha1Core>) -> [u32; 5] {
        for (i, w) in inner.iter().enumerate() {
            block[i * 4..i * 4 + 4].copy_from_slice(&w.to_be_bytes());
        }
        Self::finish(self.outer, block, 20)
    }

    /// HMAC of a 20-byte message held as five big-endian words.
    #[inline(always)]
    fn mac_words(&self, msg: &[u32; 5], block: &mut Block<Sha1Core>) -> [u32; 5] {
        for (i, w) in msg.iter().enumerate() {
            block[i * 4..i * 4 + 4].copy_from_slice(&w.to_be_bytes());
        }
        let inner = Self::finish(self.inner, block, 20);
        self.outer_of(inner, block)
    }

    /// First PBKDF2 block, truncated to 16 bytes. `salt` must be at most
    /// [`MAX_SALT_LEN`] bytes and `iterations` at least 1.
    pub fn pbkdf2_block1(&self, salt: &[u8], iterations: u32) -> [u8; 16] {
        assert!(salt.len() <= MAX_SALT_LEN, "salt too long for the single-block path");
        assert!(iterations >= 1);
        let mut block = Block::<Sha1Core>::default();
        block[..salt.len()].copy_from_slice(salt);
        block[salt.len()..salt.len() + 4].copy_from_slice(&1u32.to_be_bytes());
        let inner = Self::finish(self.inner, &mut block, salt.len() + 4);
        let mut u = self.outer_of(inner, &mut block);
        let mut t = u;
        for _ in 1..iterations {
            u = self.mac_words(&u, &mut block);
            for j in 0..5 {
                t[j] ^= u[j];
            }
        }
        let mut out = [0u8; 16];
        for j in 0..4 {
            out[j * 4..j * 4 + 4].copy_from_slice(&t[j].to_be_bytes());
        }
        out
    }
}

/// PBKDF2-HMAC-SHA1 truncated to 16 bytes, same result as
/// [`crate::crypto::kdf::pbkdf2_sha1`] for salts up to [`MAX_SALT_LEN`].
pub fn pbkdf2_sha1_16(password: &[u8], salt: &[u8], iterations: u32) -> [u8; 16] {
    HmacSha1::new(password).pbkdf2_block1(salt, iterations)
}

/// SHA-1 compressions one candidate costs: two for the pad states plus two
/// per iteration.
pub fn compressions_per_candidate(iterations: u32) -> u64 {
    2 + 2 * iterations as u64
}
