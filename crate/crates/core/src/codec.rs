//! Base64 packing of `f64` arrays (little-endian IEEE-754), used by checkpoints.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("payload of {0} bytes is not a whole number of f64 values")]
    Length(usize),
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>, CodecError> {
    let bytes = STANDARD.decode(text)?;
    if bytes.len() % 8 != 0 {
        return Err(CodecError::Length(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// `#[serde(with = "crate::codec::f64_b64")]` for `Vec<f64>` fields.
pub mod f64_b64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_f64s(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        super::decode_f64s(&text).map_err(serde::de::Error::custom)
    }
}
