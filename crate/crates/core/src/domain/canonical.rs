//! Canonical JSON: object keys sorted, no whitespace, floats in shortest
//! round-trip form. Every structured payload in files and on the wire uses it.

use serde::{de::DeserializeOwned, Serialize};

#[derive(Debug, thiserror::Error)]
#[error("canonical json: {0}")]
pub struct CanonicalError(#[from] serde_json::Error);

/// Serialize through `serde_json::Value`, whose object map is ordered by key.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    to_canonical_string(value).map(String::into_bytes)
}

pub fn from_json_slice<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    Ok(serde_json::from_slice(bytes)?)
}
