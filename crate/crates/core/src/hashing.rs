//! Content hashes used for provenance and cache keys.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of several fields, each length-prefixed so that field boundaries
/// cannot be confused (`("ab", "c")` and `("a", "bc")` differ).
pub fn sha256_fields<'a, I>(fields: I) -> [u8; 32]
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hasher.finalize().into()
}

pub fn sha256_fields_hex<'a, I>(fields: I) -> String
where
    I: IntoIterator<Item = &'a [u8]>,
{
    hex::encode(sha256_fields(fields))
}
