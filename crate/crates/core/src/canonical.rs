//! Canonical JSON: object keys sorted, no insignificant whitespace, UTF-8.

use serde::Serialize;

/// Serializes `value` as canonical JSON.
///
/// Values are routed through [`serde_json::Value`], whose object map is a
/// sorted `BTreeMap`, so nested object keys come out in byte order regardless
/// of struct field order.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let tree = serde_json::to_value(value)?;
    serde_json::to_string(&tree)
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    to_string(value).map(String::into_bytes)
}
