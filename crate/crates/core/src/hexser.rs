//! Serde helpers for fixed-size byte arrays stored as lowercase hex strings.

use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
    let text = String::deserialize(d)?;
    decode_fixed(&text).map_err(D::Error::custom)
}

pub fn decode_fixed<const N: usize>(text: &str) -> Result<[u8; N], String> {
    let raw = hex::decode(text.trim()).map_err(|e| format!("invalid hex: {e}"))?;
    raw.as_slice()
        .try_into()
        .map_err(|_| format!("expected {N} bytes of hex, got {}", raw.len()))
}
