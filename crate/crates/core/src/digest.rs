//! Content digests over canonical JSON.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // serde_json::Map is ordered by key unless preserve_order is enabled.
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Lowercase hex SHA-256 of [`canonical_json`].
pub fn stable_digest<T: Serialize>(value: &T) -> serde_json::Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_json(value)?.as_bytes())))
}
